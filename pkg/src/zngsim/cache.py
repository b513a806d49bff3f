"""Shared L2: banked set-associative cache with prefetch tagging.

Demand lines are read-only. Written data bypasses the cache (the clean
copy is invalidated) unless write redirection is active, in which case
writes land dirty in a pinned way of their set. Lines are keyed by
logical 128B line number so they survive block relocation by GC.

A line's ``ready`` time doubles as the miss-status register: a read that
finds a line still in flight waits for it instead of issuing a second
flash read.
"""

from __future__ import annotations

from collections import OrderedDict
from typing import NamedTuple

from .config import L2Config, PrefetchConfig
from .timeline import Clock, Timeline


class TagEntry:
    __slots__ = ("line", "version", "ready", "prefetch", "accessed", "pinned", "dirty", "app")

    def __init__(self, line: int, version: int = 0, ready: int = 0, prefetch: bool = False,
                 pinned: bool = False, dirty: bool = False, app: int = 0):
        self.line = line
        self.version = version
        self.ready = ready
        self.prefetch = prefetch
        self.accessed = not prefetch
        self.pinned = pinned
        self.dirty = dirty
        self.app = app

    def __repr__(self):
        flags = "".join(c for c, on in (("P", self.prefetch), ("A", self.accessed), ("N", self.pinned),
                                        ("D", self.dirty)) if on)
        return f"TagEntry(line={self.line}, v={self.version}, {flags or '-'})"


class MissAction(NamedTuple):
    kind: str            # flash-read | flash-write | pinned-write
    window_start: int    # first line of the fetch window (reads)
    window_lines: int


class LookupResult(NamedTuple):
    hit: bool
    latency: int
    miss_action: MissAction | None


def _fold(pc: int, bits: int) -> int:
    x = pc >> 2
    mask = (1 << bits) - 1
    h = 0
    while x:
        h ^= x & mask
        x >>= bits
    return h


class PredictorTable:
    """Per-PC page-locality predictor.

    Each entry tracks up to ``warp_slots`` warps with the last logical
    page each touched, plus a single saturating counter. A tracked warp
    revisiting its page counts up; anything else counts down and
    refreshes (or claims, round-robin) a warp slot.
    """

    def __init__(self, entries: int = 512, warp_slots: int = 5, counter_max: int = 15, threshold: int = 12):
        self.entries = entries
        self.bits = max(1, (entries - 1).bit_length())
        self.warp_slots = warp_slots
        self.counter_max = counter_max
        self.threshold = threshold
        self.warps = [[None] * warp_slots for _ in range(entries)]
        self.pages = [[None] * warp_slots for _ in range(entries)]
        self.counter = [0] * entries
        self._rr = [0] * entries
        self._index: dict[int, int] = {}

    def index(self, pc: int) -> int:
        i = self._index.get(pc)
        if i is None:
            i = self._index[pc] = _fold(pc, self.bits) % self.entries
        return i

    def update(self, pc: int, warp_id: int, page: int) -> int:
        i = self.index(pc)
        warps = self.warps[i]
        try:
            s = warps.index(warp_id)
        except ValueError:
            s = self._rr[i]
            self._rr[i] = (s + 1) % self.warp_slots
            warps[s] = warp_id
            self.pages[i][s] = page
            c = self.counter[i] - 1
        else:
            if self.pages[i][s] == page:
                c = self.counter[i] + 1
            else:
                self.pages[i][s] = page
                c = self.counter[i] - 1
        c = 0 if c < 0 else (self.counter_max if c > self.counter_max else c)
        self.counter[i] = c
        return c

    def predict(self, pc: int, warp_id: int, page: int) -> tuple[int, bool]:
        """Update the entry for this access; return ``(counter, do_prefetch)``."""
        c = self.update(pc, warp_id, page)
        return c, c > self.threshold


class AccessMonitor:
    """Tracks wasted prefetches among evictions and steers the fetch size."""

    def __init__(self, high: float = 0.3, low: float = 0.05, granularity: int = 4096,
                 floor: int = 128, cap: int = 4096, step_up: int = 1024):
        self.high = high
        self.low = low
        self.granularity = granularity
        self.floor = floor
        self.cap = cap
        self.step_up = step_up
        self.evict_counter = 0
        self.unused_counter = 0
        self.history: list[tuple[float, int]] = []

    def on_evict(self, entry: TagEntry) -> None:
        self.evict_counter += 1
        if entry.prefetch and not entry.accessed:
            self.unused_counter += 1

    @property
    def waste_ratio(self) -> float:
        return self.unused_counter / self.evict_counter if self.evict_counter else 0.0

    def adjust_granularity(self) -> int:
        ratio = self.waste_ratio
        g = self.granularity
        if ratio > self.high:
            g = max(self.floor, (g // 2) // self.floor * self.floor)
        elif ratio < self.low:
            g = min(self.cap, g + self.step_up)
        self.granularity = g
        self.history.append((round(ratio, 6), g))
        self.evict_counter = 0
        self.unused_counter = 0
        return g


class L2Cache:
    def __init__(self, cfg: L2Config | None = None, prefetch: PrefetchConfig | None = None, page_size: int = 4096,
                 clock: Clock | None = None):
        self.cfg = cfg = cfg or L2Config()
        self.pf = pf = prefetch or PrefetchConfig()
        self.page_lines = page_size // cfg.line
        self.n_sets = cfg.total_sets
        self.banks = cfg.banks
        self.ways = cfg.ways
        self.sets: list[OrderedDict | None] = [None] * self.n_sets
        self.pinned: dict[int, OrderedDict] = {}
        self.pin_active = False
        self.bank_tl = [Timeline(clock) for _ in range(cfg.banks)]
        self.predictor = PredictorTable(pf.predictor_entries, pf.warp_slots, pf.counter_max, pf.threshold)
        self.monitor = AccessMonitor(pf.high_threshold, pf.low_threshold, pf.initial_granularity)
        self.hits = 0
        self.misses = 0
        self.prefetch_filled = 0
        self.prefetch_used = 0
        self.pinned_writes = 0
        self.pin_events = 0

    # ------------------------------------------------------------ geometry
    def set_of(self, line: int) -> int:
        return line % self.n_sets

    def bank_of(self, line: int) -> int:
        return (line % self.n_sets) % self.banks

    def bank_access(self, line: int, now: int, cycles: int) -> int:
        return self.bank_tl[(line % self.n_sets) % self.banks].reserve(now, cycles) + cycles

    @property
    def normal_ways(self) -> int:
        return self.ways - self.cfg.pinned_ways if self.pin_active else self.ways

    # -------------------------------------------------------------- access
    def find(self, line: int) -> TagEntry | None:
        s = line % self.n_sets
        od = self.sets[s]
        if od is not None:
            e = od.get(line)
            if e is not None:
                od.move_to_end(line)
                return e
        pod = self.pinned.get(s)
        if pod is not None:
            e = pod.get(line)
            if e is not None:
                pod.move_to_end(line)
                return e
        return None

    def touch(self, entry: TagEntry) -> None:
        """Demand access to a resident line: sets the accessed bit."""
        if not entry.accessed:
            entry.accessed = True
            if entry.prefetch:
                self.prefetch_used += 1

    def contains(self, line: int) -> bool:
        s = line % self.n_sets
        od = self.sets[s]
        if od is not None and line in od:
            return True
        pod = self.pinned.get(s)
        return pod is not None and line in pod

    def fill(self, line: int, version: int, ready: int, prefetch: bool = False, app: int = 0) -> TagEntry:
        s = line % self.n_sets
        od = self.sets[s]
        if od is None:
            od = self.sets[s] = OrderedDict()
        e = od.get(line)
        if e is not None:
            od.move_to_end(line)
            return e
        cap = self.normal_ways
        while len(od) >= cap:
            _, victim = od.popitem(last=False)
            self.monitor.on_evict(victim)
        e = TagEntry(line, version, ready, prefetch, app=app)
        if prefetch:
            self.prefetch_filled += 1
        od[line] = e
        return e

    def invalidate(self, line: int) -> bool:
        od = self.sets[line % self.n_sets]
        if od is not None and line in od:
            del od[line]
            return True
        return False

    def write_pinned(self, line: int, version: int, ready: int, app: int = 0) -> TagEntry | None:
        """Absorb a write in the pinned way; returns a displaced dirty line, if any."""
        s = line % self.n_sets
        self.pinned_writes += 1
        pod = self.pinned.get(s)
        if pod is None:
            pod = self.pinned[s] = OrderedDict()
        e = pod.get(line)
        if e is not None:
            e.version = version
            e.ready = max(e.ready, ready)
            e.app = app
            pod.move_to_end(line)
            return None
        self.invalidate(line)
        victim = None
        if len(pod) >= self.cfg.pinned_ways:
            _, victim = pod.popitem(last=False)
        pod[line] = TagEntry(line, version, ready, pinned=True, dirty=True, app=app)
        return victim

    def take_pinned(self, line: int) -> TagEntry | None:
        pod = self.pinned.get(line % self.n_sets)
        if pod is None:
            return None
        return pod.pop(line, None)

    def pin_region(self) -> None:
        if not self.pin_active:
            self.pin_active = True
            self.pin_events += 1

    def unpin_region(self) -> list[TagEntry]:
        """Release the pinned way; returns dirty lines to write back, in set order."""
        self.pin_active = False
        return self.drain_pinned()

    def drain_pinned(self) -> list[TagEntry]:
        out = []
        for s in sorted(self.pinned):
            out.extend(self.pinned[s].values())
        self.pinned.clear()
        return out

    def pinned_occupancy(self) -> int:
        return sum(len(p) for p in self.pinned.values())

    # ---------------------------------------------------------- prefetching
    def fetch_window(self, line: int, do_prefetch: bool) -> tuple[int, int]:
        """Lines ``[start, start + n)`` to fetch for a miss on ``line``.

        The window is ``granularity`` bytes, aligned within the missing
        line's flash page, and always contains the missing line.
        """
        if not do_prefetch:
            return line, 1
        g_lines = max(1, self.monitor.granularity // self.cfg.line)
        page_start = line - line % self.page_lines
        start = page_start + ((line - page_start) // g_lines) * g_lines
        n = min(g_lines, page_start + self.page_lines - start)
        return start, n

    def note_miss(self) -> None:
        self.misses += 1
        if self.pf.enabled and self.misses % self.pf.epoch_misses == 0:
            self.monitor.adjust_granularity()

    def lookup(self, line: int, op: int, pc: int, warp_id: int, page: int, now: int) -> LookupResult:
        """Tag check for one request; the caller performs the miss action."""
        if op:
            if self.pin_active or self.contains_pinned(line):
                return LookupResult(False, self.cfg.write_cycles, MissAction("pinned-write", line, 1))
            self.invalidate(line)
            return LookupResult(False, self.cfg.read_cycles, MissAction("flash-write", line, 1))
        do_pf = False
        if self.pf.enabled:
            do_pf = self.predictor.predict(pc, warp_id, page)[1]
        e = self.find(line)
        if e is not None:
            self.hits += 1
            self.touch(e)
            return LookupResult(True, max(self.cfg.read_cycles, e.ready - now), None)
        start, n = self.fetch_window(line, do_pf)
        return LookupResult(False, self.cfg.read_cycles, MissAction("flash-read", start, n))

    def contains_pinned(self, line: int) -> bool:
        pod = self.pinned.get(line % self.n_sets)
        return pod is not None and line in pod

    def stats(self) -> dict:
        pf = self.prefetch_filled
        return {
            "hits": self.hits, "misses": self.misses,
            "prefetch_filled": pf, "prefetch_used": self.prefetch_used,
            "prefetch_wasted": pf - self.prefetch_used,
            "predictor_accuracy": round(self.prefetch_used / pf, 6) if pf else None,
            "granularity": self.monitor.granularity,
            "waste_ratio_series": [r for r, _ in self.monitor.history],
            "granularity_series": [g for _, g in self.monitor.history],
            "pinned_writes": self.pinned_writes, "pin_events": self.pin_events,
        }
