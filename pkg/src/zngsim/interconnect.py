"""GPU-side flash controllers, flash command sequencing, and the mesh flash network."""

from __future__ import annotations

import heapq
from typing import NamedTuple

from .ftl import FlashAddress
from .timeline import Clock, Timeline

READ_ARRAY = "read-array"
PROGRAM = "program"
ERASE = "erase"
REG_READ = "reg-read"
REG_WRITE = "reg-write"
REG_MOVE = "reg-move"
COMMAND_KINDS = (READ_ARRAY, PROGRAM, ERASE, REG_READ, REG_WRITE, REG_MOVE)
MAX_COMMAND_BYTES = 4096


class FlashCommand(NamedTuple):
    kind: str
    addr: FlashAddress | None
    key: int
    size: int
    callback: int = -1

    def check(self) -> "FlashCommand":
        if self.kind not in COMMAND_KINDS:
            raise ValueError(f"unknown flash command {self.kind!r}")
        if not 0 <= self.size <= MAX_COMMAND_BYTES:
            raise ValueError(f"flash command size {self.size} exceeds one page")
        return self


def sequence(op: str, addr: FlashAddress | None, key: int, register_hit: bool = False,
             nbytes: int = 128, evict_key: int | None = None, evict_addr: FlashAddress | None = None,
             callback: int = -1) -> list[FlashCommand]:
    """Flash commands that serve one L2 miss.

    ``op`` is ``read``, ``write`` or ``prefetch``. A read served by a
    register needs only the transfer out; otherwise the page is sensed
    first. A write lands in a register; when a dirty register had to be
    reclaimed, its move to the data register and program come first.
    """
    if op == "write":
        cmds = []
        if evict_key is not None:
            cmds.append(FlashCommand(REG_MOVE, evict_addr, evict_key, MAX_COMMAND_BYTES, callback))
            cmds.append(FlashCommand(PROGRAM, evict_addr, evict_key, MAX_COMMAND_BYTES, callback))
        cmds.append(FlashCommand(REG_WRITE, addr, key, nbytes, callback))
        return cmds
    if op not in ("read", "prefetch"):
        raise ValueError(f"unknown request kind {op!r}")
    if register_hit and op == "read":
        return [FlashCommand(REG_READ, addr, key, nbytes, callback)]
    return [FlashCommand(READ_ARRAY, addr, key, MAX_COMMAND_BYTES, callback),
            FlashCommand(REG_READ, addr, key, nbytes, callback)]


class FlashController:
    """Request dispatcher with a bounded queue of in-service requests."""

    def __init__(self, cid: int, depth: int = 32):
        self.id = cid
        self.depth = depth
        self._release: list[int] = []
        self.dispatched = 0
        self.completed = 0
        self.stalls = 0
        self.stall_cycles = 0
        self.busy_cycles = 0

    def acquire(self, now: int) -> int:
        """Time at which a request arriving at ``now`` gets a queue slot."""
        rel = self._release
        while rel and rel[0] <= now:
            heapq.heappop(rel)
        self.dispatched += 1
        if len(rel) < self.depth:
            return now
        start = heapq.heappop(rel)
        self.stalls += 1
        self.stall_cycles += start - now
        return start

    def release(self, start: int, done: int) -> None:
        heapq.heappush(self._release, done)
        self.completed += 1
        self.busy_cycles += done - start

    def in_flight(self, now: int) -> int:
        return sum(1 for t in self._release if t > now)


class Interconnect:
    """The controller set plus request/response conservation counters."""

    def __init__(self, n_controllers: int, depth: int = 32, icnt_cycles: int = 8):
        self.controllers = [FlashController(i, depth) for i in range(n_controllers)]
        self.icnt_cycles = icnt_cycles
        self.entered = 0
        self.delivered = 0

    def dispatch(self, addr: FlashAddress) -> int:
        return addr.channel % len(self.controllers)

    def stats(self) -> dict:
        return {
            "entered": self.entered, "delivered": self.delivered,
            "controllers": [{"id": c.id, "dispatched": c.dispatched, "stalls": c.stalls,
                             "stall_cycles": c.stall_cycles, "busy_cycles": c.busy_cycles}
                            for c in self.controllers],
        }


class MeshNetwork:
    """2-D mesh, dimension-ordered routing, one reservation per directed link.

    Node ``(x, y)`` is channel ``x`` and package row ``y``; controller
    ``x`` attaches at ``(x, 0)``. A message holds each link for its
    serialization time and advances one hop per ``hop_cycles``.
    """

    def __init__(self, cols: int, rows: int = 1, width: int = 8, hop_cycles: int = 1, clock: Clock | None = None):
        self.clock = clock or Clock()
        self.cols = cols
        self.rows = rows
        self.width = width
        self.hop_cycles = hop_cycles
        self.links: dict[tuple, Timeline] = {}
        self.link_bytes: dict[tuple, int] = {}
        self.messages = 0

    def path(self, src: tuple[int, int], dst: tuple[int, int]) -> list[tuple]:
        for x, y in (src, dst):
            if not (0 <= x < self.cols and 0 <= y < self.rows):
                raise ValueError(f"node {(x, y)} outside {self.cols}x{self.rows} mesh")
        links = []
        x, y = src
        while x != dst[0]:
            nx = x + (1 if dst[0] > x else -1)
            links.append(((x, y), (nx, y)))
            x = nx
        while y != dst[1]:
            ny = y + (1 if dst[1] > y else -1)
            links.append(((x, y), (x, ny)))
            y = ny
        return links

    def route(self, nbytes: int, src: tuple[int, int], dst: tuple[int, int], now: int) -> int:
        ser = -(-nbytes // self.width)
        self.messages += 1
        if src == dst:
            return now + ser
        t = now
        for link in self.path(src, dst):
            tl = self.links.get(link)
            if tl is None:
                tl = self.links[link] = Timeline(self.clock)
            start = tl.reserve(t, ser)
            self.link_bytes[link] = self.link_bytes.get(link, 0) + nbytes
            t = start + self.hop_cycles
        return t + ser

    def stats(self) -> dict:
        return {"messages": self.messages,
                "link_bytes": {f"{a}->{b}": n for (a, b), n in sorted(self.link_bytes.items())}}
