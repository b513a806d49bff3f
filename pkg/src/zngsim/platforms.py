"""Memory back-ends behind the L2.

Every back-end answers two calls from the engine:

``read(t, vaddr, tr, start_line, n_lines)``
    fetch ``n_lines`` consecutive 128B lines starting at ``start_line``
    (the demand line plus any prefetch window); returns
    ``(done, versions, array_cycles, transfer_cycles)``.
``write(t, vaddr, tr, version, app, background)``
    store one 128B line; returns ``(done, array_cycles, transfer_cycles)``.

``tr`` is the MMU translation for ZnG back-ends and ``None`` elsewhere.
Only ``ZngBackend`` holds data; the analytic back-ends leave functional
state to the engine's flat store.
"""

from __future__ import annotations

import heapq
from collections import OrderedDict

from .config import PlatformConfig
from .errors import GcRequired
from .ftl import Ftl, Geo, TranslationResult
from .interconnect import Interconnect, MeshNetwork
from .timeline import Clock, Timeline, reserve_joint
from .znand import RegisterGroup, Slot, ZNandArray, service_time

LINE = 128


def _bytes_cycles(nbytes: int, gbps: float, clock_mhz: int) -> int:
    """Cycles to move ``nbytes`` at ``gbps`` GB/s (rounded up)."""
    return -(-int(nbytes * clock_mhz) // int(gbps * 1000)) if gbps > 0 else 0


class _Servers:
    """k identical FIFO servers; returns the start time of the next job."""

    def __init__(self, k: int):
        self.free = [0] * k

    def take(self, now: int, duration: int) -> int:
        t = heapq.heappop(self.free)
        start = now if now > t else t
        heapq.heappush(self.free, start + duration)
        return start


class ZngBackend:
    """Flash controllers on the GPU network, MMU translation, Z-NAND packages."""

    def __init__(self, cfg: PlatformConfig, on_log_full=None, clock: Clock | None = None):
        g = cfg.geometry
        self.cfg = cfg
        self.clock_ref = clock = clock or Clock()
        self.geo = geo = Geo(g)
        self.array = ZNandArray(g, cfg.timing, cfg.clock_mhz, clock)
        self.ftl = Ftl(g, self.array, cfg.tlb_entries, cfg.tlb_enabled)
        r = cfg.registers
        self.regs = [RegisterGroup(p, geo.ppp, r.per_plane, r.topology, r.io_ports, r.thrash_window,
                                   r.thrash_threshold, clock) for p in range(g.n_packages)]
        self.icnt = Interconnect(g.channels, cfg.queue_depth, cfg.icnt_cycles)
        self.mesh = MeshNetwork(g.channels, g.packages, width=r.nif_width, clock=clock)
        self.topology = r.topology
        self.router = r.router_latency_cycles
        self.move_local = service_time("reg-move", g.page_size, width=r.nif_width)
        self._xfer = {}
        self.timing = cfg.timing
        self.clock = cfg.clock_mhz
        self.on_log_full = on_log_full
        self.gc_until: dict[int, int] = {}
        self.gc_last = 0
        self.page_reads: dict[int, int] = {}
        self.page_programs: dict[int, int] = {}
        self.reg_reads = 0
        self.reg_writes = 0
        self.remote_moves = 0
        self.thrashing: set[int] = set()

    # -------------------------------------------------------------- helpers
    def xfer(self, nbytes: int) -> int:
        c = self._xfer.get(nbytes)
        if c is None:
            c = self._xfer[nbytes] = service_time("transfer", nbytes, self.timing, self.clock)
        return c

    def _port(self, regs: RegisterGroup, plane: int, t: int, nbytes: int, pkg: int) -> int:
        """Move ``nbytes`` between a plane's registers and the flash network."""
        d = self.xfer(nbytes)
        port = None
        best = 0
        for tl in regs.ports:
            s = tl.probe(t, d)
            if port is None or s < best:
                port, best = tl, s
        start = reserve_joint(port, regs.io_path[plane], t, d)
        end = start + d
        ch, row = divmod(pkg, self.geo.K)
        arrive = self.mesh.route(nbytes, (ch, row), (ch, 0), start)
        return end if end > arrive else arrive

    def translate_direct(self, vaddr: int) -> TranslationResult:
        """Translation without touching the TLB (background write-backs)."""
        geo = self.geo
        vbn, off = divmod(vaddr, geo.block_bytes)
        e = self.ftl.dbmt[vbn]
        return TranslationResult(None, True, e.pdbn, e.plbn, off // geo.page_size, e.pdbn // geo.blocks, e.group)

    def logical_page(self, key: int) -> int:
        pages = self.geo.pages
        pdbn, pidx = divmod(key, pages)
        return self.ftl.by_pdbn[pdbn] * pages + pidx

    # ----------------------------------------------------------------- read
    def read(self, t: int, vaddr: int, tr: TranslationResult, start_line: int, n_lines: int):
        geo = self.geo
        pages = geo.pages
        pkg, local = divmod(tr.plane_id, geo.ppp)
        regs = self.regs[pkg]
        key = tr.pdbn * pages + tr.page_index
        spp = geo.sectors
        sector0 = start_line % spp
        slot = regs.slots.get(key)
        demand_sector = (vaddr >> 7) % spp
        hit = slot is not None and n_lines == 1 and demand_sector in slot.updates
        ch = pkg // geo.K
        ctrl = self.icnt.controllers[ch]
        self.icnt.entered += 1
        t0 = ctrl.acquire(t)
        # command order of sequence("read"): READ_ARRAY unless a register hit, then REG_READ
        if hit:
            array_c = 0
            end = self._port(regs, slot.home, max(t0, slot.ready), n_lines * LINE, pkg)
        else:
            _, content, t0 = self.array.array_read(tr.pdbn, tr.page_index, tr.plbn, t0)
            array_c = self.array.t_read
            lp = vaddr // geo.page_size
            self.page_reads[lp] = self.page_reads.get(lp, 0) + 1
            end = self._port(regs, local, t0, n_lines * LINE, pkg)
        ctrl.release(t, end)
        self.icnt.delivered += 1
        if hit:
            regs.hits += 1
            regs.touch(slot)
            self.reg_reads += 1
            return end, [slot.updates[demand_sector]], 0, self.xfer(LINE)
        base = content or {}
        upd = slot.updates if slot is not None else None
        versions = []
        for s in range(sector0, sector0 + n_lines):
            if upd is not None and s in upd:
                versions.append(upd[s])
            else:
                versions.append(base.get(s, 0))
        return end, versions, array_c, self.xfer(n_lines * LINE)

    # ---------------------------------------------------------------- write
    def write(self, t: int, vaddr: int, tr: TranslationResult | None, version: int, app: int,
              background: bool = False):
        geo = self.geo
        if tr is None:
            tr = self.translate_direct(vaddr)
        pkg, local = divmod(tr.plane_id, geo.ppp)
        regs = self.regs[pkg]
        key = tr.pdbn * geo.pages + tr.page_index
        icnt = self.icnt
        ctrl = icnt.controllers[pkg // geo.K]
        icnt.entered += 1
        t0 = ctrl.acquire(t)
        gc_until = self.gc_until
        # victims whose group is mid-merge are skipped; none can be once every merge has ended
        eligible = (lambda s: gc_until.get(s.group, 0) <= t0) if self.gc_last > t0 else None
        hit, slot, evict = regs.lookup_or_allocate(key, local, "write", tr.group, app, eligible=eligible)
        array_c = 0
        # command order of sequence("write"): REG_MOVE, PROGRAM, REG_WRITE
        if evict is not None:
            move_end, lead, prog_at = self._move(regs, pkg, evict, t0)
            slot.ready = move_end
            self._program(evict.victim, prog_at, lead)
        start = t0 if t0 > slot.ready else slot.ready
        if evict is not None:
            array_c = start - t0
        end = self._port(regs, slot.home, start, LINE, pkg)
        slot.updates[(vaddr >> 7) % geo.sectors] = version
        self.reg_writes += 1
        ctrl.release(t, end)
        icnt.delivered += 1
        if evict is not None:
            was = pkg in self.thrashing
            now = regs.thrashing()
            if now != was:
                (self.thrashing.add if now else self.thrashing.discard)(pkg)
        return end, array_c, self.xfer(LINE)

    def _move(self, regs: RegisterGroup, pkg: int, plan, t: int) -> tuple[int, int, int]:
        """Carry an evicted register's page toward its target plane.

        Returns ``(register_free_at, lead, program_not_before)`` where
        ``lead`` is the part of the move that occupies the target plane's
        data register and so is booked together with the program.
        """
        victim = plan.victim
        ready = t if t > victim.ready else victim.ready
        if plan.path == "swnet-router":
            self.remote_moves += 1
            ps = self.geo.page_size
            up = self._port(regs, victim.home, ready, ps, pkg)
            down = self._port(regs, victim.target, up + self.router, ps, pkg)
            return up, 0, down
        lead = self.move_local
        if plan.path == "nif-ring":
            self.remote_moves += 1
            lead += plan.hops
        target = pkg * self.geo.ppp + victim.target
        start = self.array.planes[target].probe(ready, lead + self.array.t_program)
        return start + lead, lead, start

    def _program(self, victim: Slot, ready: int, lead: int = 0) -> int:
        pages = self.geo.pages
        pdbn, pidx = divmod(victim.key, pages)
        vbn = self.ftl.by_pdbn[pdbn]
        e = self.ftl.dbmt[vbn]
        _, flash = self.array.resolve(pdbn, pidx, e.plbn)
        content = dict(flash) if flash else {}
        content.update(victim.updates)
        lp = vbn * pages + pidx
        self.page_programs[lp] = self.page_programs.get(lp, 0) + 1
        g_end = self.gc_until.get(e.group, 0)
        if ready < g_end:
            ready = g_end
        try:
            _, done = self.array.program_log_page(e.plbn, victim.key, content, ready, lead)
        except GcRequired:
            self.on_log_full(e.group, ready)
            e = self.ftl.dbmt[vbn]
            _, done = self.array.program_log_page(e.plbn, victim.key, content, ready, lead)
        if self.array.log_full(e.plbn) and self.on_log_full is not None:
            self.on_log_full(e.group, done)
        return done

    # ------------------------------------------------------------------- gc
    def after_gc(self, merge) -> None:
        self.gc_until[merge.group] = max(self.gc_until.get(merge.group, 0), merge.end)
        if merge.end > self.gc_last:
            self.gc_last = merge.end
        if not merge.relocations:
            return
        pages = self.geo.pages
        pkg = merge.plane_id // self.geo.ppp
        regs = self.regs[pkg]
        reloc = merge.relocations
        moved = {k: reloc[k // pages] * pages + k % pages for k in regs.slots if k // pages in reloc}
        if moved:
            regs.rekey_many(moved)

    # ---------------------------------------------------------------- drain
    def drain(self, t: int) -> None:
        """Program every dirty register (end of run; not part of completion time)."""
        for pkg, regs in enumerate(self.regs):
            for slot in sorted(regs.dirty_slots(), key=lambda s: s.key):
                regs.release(slot)
                self._program(slot, max(t, slot.ready), self.move_local)

    def counters(self) -> dict:
        c = self.array.counters()
        c.update({
            "register_hits": sum(r.hits for r in self.regs),
            "register_misses": sum(r.misses for r in self.regs),
            "register_evictions": sum(r.evictions for r in self.regs),
            "register_remote_evictions": sum(r.remote_evictions for r in self.regs),
            "tlb_hits": self.ftl.tlb.hits, "tlb_misses": self.ftl.tlb.misses,
            "interconnect": self.icnt.stats(),
        })
        return c


class HybridBackend:
    """SSD-controller path: one dispatcher, an internal DRAM buffer, narrow bus channels."""

    def __init__(self, cfg: PlatformConfig, clock: Clock | None = None):
        g = cfg.geometry
        h = cfg.hybrid
        clock = clock or Clock()
        self.geo = Geo(g)
        self.clock = cfg.clock_mhz
        self.dispatch = _Servers(h.engine_cores)
        self.ftl_cycles = cfg.ns_to_cycles(h.ftl_ns)
        self.bus = Timeline(clock)
        self.bus_gbps = h.dram_bus_gbps
        self.buffer: OrderedDict[int, bool] = OrderedDict()
        self.buffer_pages = max(1, h.dram_buffer_bytes // g.page_size)
        self.channels = [Timeline(clock) for _ in range(g.channels)]
        self.planes = [Timeline(clock) for _ in range(g.total_planes)]
        self.t_read = service_time("read", timing=cfg.timing, clock_mhz=self.clock)
        self.t_program = service_time("program", timing=cfg.timing, clock_mhz=self.clock)
        self.page_xfer = service_time("transfer", g.page_size, cfg.timing, self.clock, width=h.channel_width)
        self.page_size = g.page_size
        self.reads = 0
        self.programs = 0
        self.page_reads: dict[int, int] = {}
        self.page_programs: dict[int, int] = {}

    def _bus(self, t: int, nbytes: int) -> int:
        d = _bytes_cycles(nbytes, self.bus_gbps, self.clock)
        return self.bus.reserve(t, d) + d

    def _plane(self, lpage: int) -> tuple[int, int]:
        plane = self.geo.plane_of_stripe(lpage)
        return plane, plane // (self.geo.ppp * self.geo.K)

    def _flash(self, t: int, lpage: int, program: bool) -> int:
        plane, ch = self._plane(lpage)
        x = self.page_xfer
        if program:
            cs = self.channels[ch].reserve(t, x)
            self.programs += 1
            self.page_programs[lpage] = self.page_programs.get(lpage, 0) + 1
            return self.planes[plane].reserve(cs + x, self.t_program) + self.t_program
        ps = self.planes[plane].reserve(t, self.t_read)
        self.reads += 1
        self.page_reads[lpage] = self.page_reads.get(lpage, 0) + 1
        return self.channels[ch].reserve(ps + self.t_read, x) + x

    def _insert(self, t: int, lpage: int, dirty: bool) -> None:
        buf = self.buffer
        buf[lpage] = dirty or buf.get(lpage, False)
        buf.move_to_end(lpage)
        while len(buf) > self.buffer_pages:
            victim, was_dirty = buf.popitem(last=False)
            if was_dirty:
                self._flash(self._bus(t, self.page_size), victim, program=True)

    def read(self, t, vaddr, tr, start_line, n_lines):
        lpage = vaddr // self.page_size
        t1 = self.dispatch.take(t, self.ftl_cycles) + self.ftl_cycles
        array_c = 0
        xfer_c = 0
        if lpage in self.buffer:
            self.buffer.move_to_end(lpage)
        else:
            t1 = self._flash(t1, lpage, program=False)
            array_c = self.t_read
            xfer_c = self.page_xfer
            t1 = self._bus(t1, self.page_size)
            self._insert(t1, lpage, False)
        end = self._bus(t1, n_lines * LINE)
        return end, None, array_c, xfer_c + _bytes_cycles(n_lines * LINE, self.bus_gbps, self.clock)

    def write(self, t, vaddr, tr, version, app, background=False):
        lpage = vaddr // self.page_size
        t1 = self.dispatch.take(t, self.ftl_cycles) + self.ftl_cycles
        end = self._bus(t1, LINE)
        self._insert(end, lpage, True)
        return end, 0, _bytes_cycles(LINE, self.bus_gbps, self.clock)

    def drain(self, t: int) -> None:
        for lpage, dirty in list(self.buffer.items()):
            if dirty:
                self._flash(t, lpage, program=True)
                self.buffer[lpage] = False

    def counters(self) -> dict:
        return {"reads": self.reads, "programs": self.programs, "erases": 0, "buffer_pages": len(self.buffer)}


class OptaneBackend:
    """Byte-addressable persistent memory: controllers x banks with an open-row policy."""

    def __init__(self, cfg: PlatformConfig, clock: Clock | None = None):
        o = cfg.optane
        self.clock_ref = clock or Clock()
        self.o = o
        self.clock = cfg.clock_mhz
        self.t_cl = cfg.ns_to_cycles(o.t_cl_ns)
        self.t_rcd = cfg.ns_to_cycles(o.t_rcd_ns)
        self.t_rp = cfg.ns_to_cycles(o.t_rp_ns)
        self.open_row: dict[tuple, int] = {}
        self.bank_busy: dict[tuple, Timeline] = {}
        self.buses = [Timeline(self.clock_ref) for _ in range(o.controllers)]
        self.row_hits = 0
        self.row_misses = 0
        self.accesses = 0

    def _access(self, t: int, vaddr: int, nbytes: int) -> tuple[int, int]:
        o = self.o
        chunk = vaddr // o.row_bytes
        ctrl = chunk % o.controllers
        bank = (chunk // o.controllers) % o.banks
        row = chunk // (o.controllers * o.banks)
        b = (ctrl, bank)
        tl = self.bank_busy.get(b)
        if tl is None:
            tl = self.bank_busy[b] = Timeline(self.clock_ref)
        cur = self.open_row.get(b)
        if cur == row:
            lat = self.t_cl
            self.row_hits += 1
        elif cur is None:
            lat = self.t_rcd + self.t_cl
            self.row_misses += 1
        else:
            lat = self.t_rp + self.t_rcd + self.t_cl
            self.row_misses += 1
        self.open_row[b] = row
        start = tl.reserve(t, lat)
        ser = _bytes_cycles(nbytes, o.bus_gbps, self.clock)
        self.accesses += 1
        return self.buses[ctrl].reserve(start + lat, ser) + ser, lat

    def read(self, t, vaddr, tr, start_line, n_lines):
        end, lat = self._access(t, start_line * LINE, n_lines * LINE)
        return end, None, lat, _bytes_cycles(n_lines * LINE, self.o.bus_gbps, self.clock)

    def write(self, t, vaddr, tr, version, app, background=False):
        end, lat = self._access(t, vaddr, LINE)
        return end, lat, _bytes_cycles(LINE, self.o.bus_gbps, self.clock)

    def drain(self, t: int) -> None:
        pass

    def counters(self) -> dict:
        return {"reads": 0, "programs": 0, "erases": 0, "row_hits": self.row_hits,
                "row_misses": self.row_misses, "media_accesses": self.accesses}


class HeteroBackend:
    """Discrete GPU and SSD: host-serviced page faults in front of GDDR5."""

    def __init__(self, cfg: PlatformConfig, clock: Clock | None = None):
        h = cfg.hetero
        clock = clock or Clock()
        self.h = h
        self.clock = cfg.clock_mhz
        pcie = _bytes_cycles(h.fault_page, h.pcie_gbps, self.clock)
        self.fault_cycles = cfg.ns_to_cycles(h.ssd_read_ns + h.host_staging_ns) + 2 * pcie
        self.handlers = _Servers(h.fault_handlers)
        self.resident: dict[int, int] = {}
        self.gddr_latency = cfg.ns_to_cycles(h.gddr_latency_ns)
        self.chans = [Timeline(clock) for _ in range(h.gddr_channels)]
        self.faults = 0

    def _page(self, t: int, vaddr: int) -> tuple[int, int]:
        page = vaddr // self.h.fault_page
        ready = self.resident.get(page)
        if ready is None:
            self.faults += 1
            ready = self.handlers.take(t, self.fault_cycles) + self.fault_cycles
            self.resident[page] = ready
            return max(t, ready), self.fault_cycles
        return max(t, ready), 0

    def _gddr(self, t: int, vaddr: int, nbytes: int) -> int:
        ch = (vaddr // 256) % self.h.gddr_channels
        ser = _bytes_cycles(nbytes, self.h.gddr_gbps_per_channel, self.clock)
        return self.chans[ch].reserve(t, ser) + ser + self.gddr_latency

    def read(self, t, vaddr, tr, start_line, n_lines):
        t1, fault = self._page(t, vaddr)
        return self._gddr(t1, vaddr, n_lines * LINE), None, fault, 0

    def write(self, t, vaddr, tr, version, app, background=False):
        t1, fault = self._page(t, vaddr)
        return self._gddr(t1, vaddr, LINE), fault, 0

    def drain(self, t: int) -> None:
        pass

    def counters(self) -> dict:
        return {"reads": self.faults, "programs": 0, "erases": 0, "page_faults": self.faults}


def make_backend(cfg: PlatformConfig, on_log_full=None, clock: Clock | None = None):
    if cfg.is_zng:
        return ZngBackend(cfg, on_log_full, clock)
    cls = {"hybridgpu": HybridBackend, "optane": OptaneBackend, "hetero": HeteroBackend}[cfg.platform]
    return cls(cfg, clock)
