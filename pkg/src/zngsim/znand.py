"""Z-NAND packages: plane arrays, programmable row decoders, flash registers.

Page payloads are not stored byte-for-byte. A programmed page holds a
``{sector: version}`` dict (32 sectors of 128B per 4KB page); sectors
absent from the dict read as version 0, the never-written value.
Stored dicts are never mutated after programming, so GC may share them.
"""

from __future__ import annotations

import heapq
from collections import OrderedDict, deque
from typing import Callable, NamedTuple

from .config import Geometry, ZTimingConfig, ns_to_cycles
from .errors import CapacityExhausted, ConfigError, GcRequired
from .ftl import DATA, LOG, Geo
from .timeline import Clock, Timeline

UNINIT = 0
FREE, VALID, STALE = "free", "valid", "stale"


def transfer_ns(nbytes: int, mts: int = 800, width: int = 8) -> float:
    """Interface transfer time: ``nbytes`` over ``width`` lanes at ``mts`` MT/s."""
    return nbytes * 1000.0 / (mts * width)


def service_time(kind: str, nbytes: int = 0, timing: ZTimingConfig | None = None,
                 clock_mhz: int = 1200, width: int | None = None) -> int:
    """Duration of one flash operation in cycles (rounded up).

    ``kind`` is ``transfer`` (over the package interface), ``read``,
    ``program``, ``erase`` or ``reg-move`` (register to data register over
    an internal bus ``width`` bytes wide, one beat per cycle).
    """
    timing = timing or ZTimingConfig()
    if kind == "transfer":
        return ns_to_cycles(transfer_ns(nbytes, timing.channel_mts, width or timing.channel_width), clock_mhz)
    if kind == "read":
        return ns_to_cycles(timing.t_read_ns, clock_mhz)
    if kind == "program":
        return ns_to_cycles(timing.t_program_ns, clock_mhz)
    if kind == "erase":
        return ns_to_cycles(timing.t_erase_ns, clock_mhz)
    if kind == "reg-move":
        return -(-nbytes // (width or 8))
    raise ConfigError(f"unknown flash operation {kind!r}")


class Lpmt:
    """Log page mapping table held by a log block's programmable row decoder.

    Rows are appended in program order; row ``r`` maps to log page ``r``.
    A search behaves like the decoder's CAM match where only the newest
    row for a key can discharge its wordline.
    """

    __slots__ = ("rows", "index", "capacity")

    def __init__(self, capacity: int):
        self.rows: list[int] = []
        self.index: dict[int, int] = {}
        self.capacity = capacity

    def search(self, key: int) -> int | None:
        return self.index.get(key)

    def append(self, key: int) -> int:
        if len(self.rows) >= self.capacity:
            raise IndexError("row decoder full")
        row = len(self.rows)
        self.rows.append(key)
        self.index[key] = row
        return row

    def __len__(self):
        return len(self.rows)


class ZNandArray:
    """Every plane of the device: block state, page contents, busy times."""

    def __init__(self, geometry: Geometry, timing: ZTimingConfig | None = None, clock_mhz: int = 1200,
                 clock: Clock | None = None):
        self.geo = geo = Geo(geometry)
        self.timing = timing = timing or ZTimingConfig()
        self.t_read = service_time("read", timing=timing, clock_mhz=clock_mhz)
        self.t_program = service_time("program", timing=timing, clock_mhz=clock_mhz)
        self.t_erase = service_time("erase", timing=timing, clock_mhz=clock_mhz)
        n = geo.n_planes
        self.clock = clock or Clock()
        self.planes = [Timeline(self.clock) for _ in range(n)]
        self.reads = [0] * n
        self.programs = [0] * n
        self.erases = [0] * n
        self.gc_cycles: dict[int, int] = {}
        self.cursor: dict[int, int] = {}
        self.role: dict[int, str] = {}
        self.erase_count: dict[int, int] = {}
        self.block_programs: dict[int, int] = {}
        self.content: dict[int, dict] = {}
        self.lpmt: dict[int, Lpmt] = {}
        self.data_limit = geometry.data_blocks_per_plane
        self._data_count = [0] * n
        self._untouched = [0] * n
        self._pool: list[list] = [[] for _ in range(n)]
        self.uninit_reads = 0

    # --------------------------------------------------------- block pool
    def free_blocks(self, plane_id: int) -> int:
        return len(self._pool[plane_id]) + self.geo.blocks - self._untouched[plane_id]

    def allocate_block(self, plane_id: int, role: str = DATA, enforce_limit: bool = True) -> int:
        """Take the erased block with the lowest erase count (then lowest id)."""
        if role == DATA and enforce_limit and self._data_count[plane_id] >= self.data_limit:
            raise CapacityExhausted(f"plane {plane_id}: addressable data blocks exhausted")
        pool = self._pool[plane_id]
        u = self._untouched[plane_id]
        base = plane_id * self.geo.blocks
        if u < self.geo.blocks and (not pool or (0, base + u) < pool[0]):
            pbn = base + u
            self._untouched[plane_id] = u + 1
        elif pool:
            pbn = heapq.heappop(pool)[1]
        else:
            raise CapacityExhausted(f"plane {plane_id}: no erased block left")
        self.role[pbn] = role
        self.cursor[pbn] = 0
        if role == DATA:
            self._data_count[plane_id] += 1
        else:
            self.lpmt[pbn] = Lpmt(self.geo.pages)
        return pbn

    def erase(self, pbn: int, now: int | None = 0) -> int:
        """Erase a block; ``now=None`` skips timing (merge work is timed by the caller)."""
        if pbn not in self.role:
            raise CapacityExhausted(f"erase of unallocated block {pbn}")
        pages = self.geo.pages
        base = pbn * pages
        for p in range(self.cursor[pbn]):
            self.content.pop(base + p, None)
        plane_id = pbn // self.geo.blocks
        if self.role.pop(pbn) == DATA:
            self._data_count[plane_id] -= 1
        self.lpmt.pop(pbn, None)
        del self.cursor[pbn]
        ec = self.erase_count.get(pbn, 0) + 1
        self.erase_count[pbn] = ec
        heapq.heappush(self._pool[plane_id], (ec, pbn))
        self.erases[plane_id] += 1
        if now is None:
            return 0
        return self.planes[plane_id].reserve(now, self.t_erase) + self.t_erase

    # ------------------------------------------------------------ program
    def program(self, pbn: int, page: int, content: dict) -> int:
        """Functional program of one page; enforces in-order, erase-before-write."""
        cur = self.cursor.get(pbn)
        if cur is None:
            raise CapacityExhausted(f"program to unallocated block {pbn}")
        if page < cur or page >= self.geo.pages:
            raise CapacityExhausted(f"out-of-order program: block {pbn} page {page}, next free {cur}")
        ppn = pbn * self.geo.pages + page
        self.content[ppn] = content
        self.cursor[pbn] = page + 1
        self.block_programs[pbn] = self.block_programs.get(pbn, 0) + 1
        self.programs[pbn // self.geo.blocks] += 1
        return ppn

    def program_log_page(self, plbn: int, key: int, content: dict, now: int, lead: int = 0) -> tuple[int, int]:
        """Program the next free log page and record ``key`` in the LPMT.

        The plane is booked for ``lead`` cycles (loading its data register)
        plus the program time. Returns ``(ppn, ready_time)``; raises
        :class:`GcRequired` when the log block is full.
        """
        lp = self.lpmt[plbn]
        cur = self.cursor[plbn]
        if cur >= self.geo.pages:
            raise GcRequired(plbn)
        ppn = self.program(plbn, cur, content)
        lp.append(key)
        d = lead + self.t_program
        return ppn, self.planes[plbn // self.geo.blocks].reserve(now, d) + d

    def log_full(self, plbn: int) -> bool:
        return self.cursor[plbn] >= self.geo.pages

    # --------------------------------------------------------------- read
    def resolve(self, pdbn: int, page_index: int, plbn: int) -> tuple[int, dict | None]:
        """Functional read: newest logged copy if the decoder matches, else the data page."""
        pages = self.geo.pages
        key = pdbn * pages + page_index
        lp = self.lpmt.get(plbn)
        row = lp.index.get(key) if lp is not None else None
        if row is not None:
            ppn = plbn * pages + row
        else:
            ppn = key
        return ppn, self.content.get(ppn)

    def array_read(self, pdbn: int, page_index: int, plbn: int, now: int) -> tuple[int, dict | None, int]:
        """Sense one page. Returns ``(ppn, content, ready_time)``."""
        ppn, content = self.resolve(pdbn, page_index, plbn)
        if content is None:
            self.uninit_reads += 1
        plane_id = pdbn // self.geo.blocks
        self.reads[plane_id] += 1
        return ppn, content, self.planes[plane_id].reserve(now, self.t_read) + self.t_read

    def page_state(self, pbn: int, page: int, plbn: int | None = None) -> str:
        pages = self.geo.pages
        if pbn not in self.cursor or page >= self.cursor[pbn] or (pbn * pages + page) not in self.content:
            return FREE
        if self.role[pbn] == LOG:
            key = self.lpmt[pbn].rows[page]
            return VALID if self.lpmt[pbn].index[key] == page else STALE
        if plbn is not None and (pbn * pages + page) in self.lpmt[plbn].index:
            return STALE
        return VALID

    def counters(self) -> dict:
        return {"reads": sum(self.reads), "programs": sum(self.programs), "erases": sum(self.erases),
                "uninitialized_reads": self.uninit_reads, "gc_cycles": sum(self.gc_cycles.values())}


# -------------------------------------------------------------- registers

class Slot:
    __slots__ = ("key", "home", "target", "updates", "ready", "group", "app")

    def __init__(self, key, home, target, group, app):
        self.key = key
        self.home = home          # plane whose register group holds the slot
        self.target = target      # plane the page will be programmed to
        self.updates: dict = {}
        self.ready = 0
        self.group = group
        self.app = app


class EvictPlan(NamedTuple):
    victim: Slot
    path: str  # local | direct | nif-ring | swnet-router
    hops: int


class RegisterDecision(NamedTuple):
    hit: bool
    slot: Slot | None
    evict: EvictPlan | None


def thrash_check(evictions: int, rewritten: int, threshold: float = 0.5) -> bool:
    """True when re-written dirty evictions exceed ``threshold`` of all evictions."""
    return evictions > 0 and rewritten / evictions > threshold


class RegisterGroup:
    """Flash registers of one package under a grouping topology.

    ``baseline`` keeps each plane's registers private. ``swnet``,
    ``fcnet`` and ``nif`` let any register hold any plane's page, and the
    three share one allocation policy so they differ only in data movement
    cost: prefer a free register of the target plane, then the nearest
    free register, then the package-wide LRU victim.
    """

    def __init__(self, package: int, planes: int, per_plane: int, topology: str = "baseline",
                 io_ports: int = 2, thrash_window: int = 64, thrash_threshold: float = 0.5,
                 clock: Clock | None = None):
        self.package = package
        self.planes = planes
        self.per_plane = per_plane
        self.topology = topology
        self.grouped = topology != "baseline"
        self.slots: dict[int, Slot] = {}
        if self.grouped:
            self._lru = OrderedDict()
        else:
            self._lrus = [OrderedDict() for _ in range(planes)]
        self.free = [per_plane] * planes
        self.free_total = per_plane * planes
        clock = clock or Clock()
        self.ports = [Timeline(clock) for _ in range(io_ports)]
        self.io_path = [Timeline(clock) for _ in range(planes)]
        self.hits = 0
        self.misses = 0
        self.evictions = 0
        self.remote_evictions = 0
        self.window: deque = deque()
        self.window_size = thrash_window
        self.thrash_threshold = thrash_threshold
        self._recent: dict[int, list] = {}
        self.rewritten = 0

    def _pool(self, local_plane: int) -> OrderedDict:
        return self._lru if self.grouped else self._lrus[local_plane]

    def lookup(self, key: int) -> Slot | None:
        return self.slots.get(key)

    def touch(self, slot: Slot) -> None:
        self._pool(slot.home).move_to_end(slot.key)

    def lookup_or_allocate(self, key: int, target: int, intent: str = "write", group: int = -1, app: int = 0,
                           eligible: Callable[[Slot], bool] | None = None) -> RegisterDecision:
        """Find ``key``; on a write miss allocate a slot, naming a victim if none is free."""
        slot = self.slots.get(key)
        grouped = self.grouped
        if slot is not None:
            self.hits += 1
            (self._lru if grouped else self._lrus[slot.home]).move_to_end(key)
            return RegisterDecision(True, slot, None)
        self.misses += 1
        if intent != "write":
            return RegisterDecision(False, None, None)
        self._note_write_miss(key)
        evict = None
        if self.free[target]:
            home = target
        elif grouped and self.free_total:
            home = self._nearest_free(target)
        else:
            victim = self._pick_victim(self._lru if grouped else self._lrus[target], eligible)
            self._remove(victim, free=False)
            home = victim.home
            evict = EvictPlan(victim, *self._path(home, victim.target))
            self.evictions += 1
            if evict.path in ("nif-ring", "swnet-router"):
                self.remote_evictions += 1
            self._record_eviction(victim.key)
        if evict is None:
            self.free[home] -= 1
            self.free_total -= 1
        slot = Slot(key, home, target, group, app)
        if evict is not None:
            slot.ready = evict.victim.ready
        self.slots[key] = slot
        (self._lru if grouped else self._lrus[home])[key] = slot
        return RegisterDecision(False, slot, evict)

    def _nearest_free(self, target: int) -> int:
        n = self.planes
        for d in range(1, n):
            for p in ((target + d) % n, (target - d) % n):
                if self.free[p]:
                    return p
        raise RuntimeError("free_total out of sync")

    @staticmethod
    def _pick_victim(pool: OrderedDict, eligible) -> Slot:
        if eligible is not None:
            for s in pool.values():
                if eligible(s):
                    return s
        return next(iter(pool.values()))

    def _path(self, home: int, target: int) -> tuple[str, int]:
        if home == target:
            return "local", 0
        if self.topology == "fcnet":
            return "direct", 0
        if self.topology == "nif":
            d = abs(home - target)
            return "nif-ring", min(d, self.planes - d)
        return "swnet-router", 0

    def _remove(self, slot: Slot, free: bool = True) -> None:
        del self.slots[slot.key]
        del self._pool(slot.home)[slot.key]
        if free:
            self.free[slot.home] += 1
            self.free_total += 1

    def release(self, slot: Slot) -> None:
        """Drop a slot after its data was written back (flush paths)."""
        self._remove(slot, free=True)

    def rekey(self, old: int, new: int) -> None:
        if old in self.slots:
            self.rekey_many({old: new})

    def rekey_many(self, moved: dict[int, int]) -> None:
        """Rekey several slots at once, keeping each one's LRU position."""
        slots = self.slots
        for old, new in moved.items():
            slot = slots.pop(old)
            slot.key = new
            slots[new] = slot
        for pool in (self._lru,) if self.grouped else self._lrus:
            if any(k in moved for k in pool):
                items = [(moved.get(k, k), s) for k, s in pool.items()]
                pool.clear()
                pool.update(items)

    def dirty_slots(self) -> list[Slot]:
        return [s for s in self.slots.values() if s.updates]

    # ------------------------------------------------------ thrash checker
    def _record_eviction(self, key: int) -> None:
        rec = [key, False]
        self.window.append(rec)
        self._recent[key] = rec
        if len(self.window) > self.window_size:
            old = self.window.popleft()
            if old[1]:
                self.rewritten -= 1
            if self._recent.get(old[0]) is old:
                del self._recent[old[0]]

    def _note_write_miss(self, key: int) -> None:
        rec = self._recent.get(key)
        if rec is not None and not rec[1]:
            rec[1] = True
            self.rewritten += 1

    def window_stats(self) -> tuple[int, int]:
        return len(self.window), self.rewritten

    def thrashing(self) -> bool:
        n, r = self.window_stats()
        return n >= self.window_size and thrash_check(n, r, self.thrash_threshold)
