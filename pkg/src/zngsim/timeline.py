"""Resource occupancy as sorted busy intervals.

Work is booked at its ready time, which is often ahead of the request
being processed; a scalar ``busy_until`` would make every later-arriving
but earlier-ready use queue behind it. A timeline instead places each
booking in the first gap that fits. Intervals that end before the shared
clock are dropped, because nothing can be booked in the past.
"""

from __future__ import annotations

from bisect import bisect_right


class Clock:
    __slots__ = ("now",)

    def __init__(self, now: int = 0):
        self.now = now


class Timeline:
    __slots__ = ("starts", "ends", "clock", "busy")

    def __init__(self, clock: Clock | None = None):
        self.starts: list[int] = []
        self.ends: list[int] = []
        self.clock = clock or Clock()
        self.busy = 0

    def _prune(self) -> None:
        ends = self.ends
        if ends and ends[0] <= self.clock.now:
            k = bisect_right(ends, self.clock.now)
            del self.starts[:k]
            del ends[:k]

    def probe(self, t: int, d: int) -> int:
        """Earliest start >= ``t`` of a free gap of length ``d`` (no booking)."""
        starts, ends = self.starts, self.ends
        if not ends:
            return t
        now = self.clock.now
        if ends[0] <= now:
            k = bisect_right(ends, now)
            del starts[:k]
            del ends[:k]
            if not ends:
                return t
        if t >= ends[-1]:
            return t
        i = bisect_right(ends, t)
        start = t
        n = len(starts)
        while i < n and start + d > starts[i]:
            if ends[i] > start:
                start = ends[i]
            i += 1
        return start

    def reserve(self, t: int, d: int) -> int:
        """Book ``d`` cycles at the earliest gap starting at or after ``t``."""
        if d <= 0:
            return t
        starts, ends = self.starts, self.ends
        if not ends:
            starts.append(t)
            ends.append(t + d)
            self.busy += d
            return t
        now = self.clock.now
        if ends[0] <= now:
            k = bisect_right(ends, now)
            del starts[:k]
            del ends[:k]
            if not ends:
                starts.append(t)
                ends.append(t + d)
                self.busy += d
                return t
        self.busy += d
        last = ends[-1]
        if t >= last:
            # after every booking: extend or append
            if t == last:
                ends[-1] = t + d
            else:
                starts.append(t)
                ends.append(t + d)
            return t
        i = bisect_right(ends, t)
        start = t
        n = len(starts)
        while i < n and start + d > starts[i]:
            if ends[i] > start:
                start = ends[i]
            i += 1
        end = start + d
        if i > 0 and ends[i - 1] == start:
            if i < n and starts[i] == end:
                ends[i - 1] = ends[i]
                del starts[i]
                del ends[i]
            else:
                ends[i - 1] = end
        elif i < n and starts[i] == end:
            starts[i] = start
        else:
            starts.insert(i, start)
            ends.insert(i, end)
        return start

    @property
    def last_end(self) -> int:
        return self.ends[-1] if self.ends else 0

    def free_at(self, t: int) -> bool:
        return self.probe(t, 1) == t


def reserve_joint(a: Timeline, b: Timeline, t: int, d: int) -> int:
    """Book the same ``d``-cycle window on two resources."""
    if (not a.ends or a.ends[-1] <= t) and (not b.ends or b.ends[-1] <= t):
        a.reserve(t, d)
        b.reserve(t, d)
        return t
    s = t
    while True:
        s1 = a.probe(s, d)
        s2 = b.probe(s1, d)
        if s2 == s1:
            break
        s = s2
    a.reserve(s1, d)
    b.reserve(s1, d)
    return s1
