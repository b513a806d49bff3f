"""Deterministic discrete-event core and metrics.

Requests are issued in trace order per application, at most one per
cycle per application, and at most ``warp_cap`` outstanding per warp.
When a request is issued the whole memory hierarchy reserves the
resources it needs (banks, ports, planes, queues) and its completion
time is known immediately; completions are events that release warp
slots. Functional state is updated at issue, so a request observes
every earlier request of its application.

The completion-time proxy ignores the end-of-run flush of dirty data;
array counters and write redundancy include it.
"""

from __future__ import annotations

import csv
import heapq
import io
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .cache import L2Cache
from .config import PlatformConfig, platform_config
from .gc import run_gc
from .platforms import ZngBackend, make_backend
from .timeline import Clock
from .trace import Trace

ISSUE, COMPLETE = 1, 0
PERFORMANCE_NOTE = ("completion time in cycles at 1.2 GHz from trace replay with a per-warp outstanding "
                    "request cap; a proxy for throughput, not IPC")


class SimEvent(NamedTuple):
    time: int
    seq: int
    kind: int
    app: int
    warp: int


class EventQueue:
    """Min-heap of events ordered by (time, insertion sequence)."""

    def __init__(self):
        self.heap: list[SimEvent] = []
        self.next_seq = itertools.count().__next__
        self.now = 0

    def push(self, time: int, kind: int, app: int = 0, warp: int = 0) -> None:
        if time < self.now:
            raise RuntimeError(f"event scheduled in the past: {time} < {self.now}")
        heapq.heappush(self.heap, (time, self.next_seq(), kind, app, warp))

    def pop(self) -> SimEvent:
        """Earliest event; the heap holds plain tuples in ``SimEvent`` field order."""
        ev = heapq.heappop(self.heap)
        self.now = ev[0]
        return ev

    def peek_time(self) -> int | None:
        return self.heap[0][0] if self.heap else None

    def __len__(self):
        return len(self.heap)


def histogram(counts) -> dict[str, int]:
    """``{k: number of pages touched exactly k times}`` with string keys for JSON."""
    vals = np.asarray(list(counts), dtype=np.int64)
    if vals.size == 0:
        return {}
    ks, ns = np.unique(vals, return_counts=True)
    return {str(int(k)): int(n) for k, n in zip(ks, ns)}


def _mean_from_hist(h: dict) -> float:
    pages = sum(h.values())
    return round(sum(int(k) * n for k, n in h.items()) / pages, 6) if pages else 0.0


@dataclass
class MetricsReport:
    platform: str
    requests: int
    reads: int
    writes: int
    completion_time: int
    completion_time_us: float
    array_reads: int
    array_programs: int
    array_erases: int
    array_bandwidth_gbps: float
    effective_bandwidth_gbps: float
    read_reaccess: dict
    write_redundancy: dict
    latency: dict
    cache: dict
    gc: dict
    per_app: dict
    counters: dict
    series: dict = field(default_factory=dict)
    note: str = PERFORMANCE_NOTE

    @property
    def read_reaccess_mean(self) -> float:
        return self.read_reaccess["array_mean"]

    @property
    def write_redundancy_mean(self) -> float:
        return self.write_redundancy["array_mean"]

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d.pop("series")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def series_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        apps = sorted(self.series.get("apps", {}))
        w.writerow(["epoch", "start_cycle"] + [f"app{a}" for a in apps])
        epoch = self.series.get("epoch_cycles", 1)
        cols = [self.series["apps"][a] for a in apps]
        for i in range(max((len(c) for c in cols), default=0)):
            w.writerow([i, i * epoch] + [c[i] if i < len(c) else 0 for c in cols])
        return buf.getvalue()

    def write(self, out_dir: str | Path, stem: str) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        j = out / f"{stem}.json"
        c = out / f"{stem}.csv"
        j.write_text(self.to_json())
        c.write_text(self.series_csv())
        return j, c


class Simulator:
    def __init__(self, cfg: PlatformConfig, trace: Trace, record_reads: bool = False):
        self.cfg = cfg
        self.trace = trace
        self.record_reads = record_reads
        self.clock = Clock()
        self.l2 = L2Cache(cfg.l2, cfg.prefetch, cfg.geometry.page_size, self.clock)
        self.backend = make_backend(cfg, self._on_log_full, self.clock)
        self.zng = isinstance(self.backend, ZngBackend)
        self.redirection = self.zng and cfg.registers.redirection
        self.mem: dict[int, int] = {}
        self.gc_log: list[dict] = []
        self._gc_now: list = []
        self.app_last: dict[int, int] = {}
        self.blocked_until: dict[int, int] = {}
        self.read_log = None
        self.prefetch_issued = 0
        self.background_writes = 0
        self.lat = dict.fromkeys(("translation", "network", "cache", "array", "transfer"), 0)
        self.lat_total = 0
        # constants of the request path, looked up once
        self._icnt = cfg.icnt_cycles
        self._tlb = (cfg.tlb_hit_cycles, cfg.tlb_miss_cycles)
        self._l2rw = (cfg.l2.read_cycles, cfg.l2.write_cycles)
        self._page_size = cfg.geometry.page_size

    # ------------------------------------------------------------------ gc
    def _on_log_full(self, gid: int, t_full: int) -> None:
        be = self.backend
        owner = be.ftl.lbmt.groups[gid].app
        merge = run_gc(gid, be.ftl, be.array, t_full, self.app_last.get(owner, 0))
        be.after_gc(merge)
        self.blocked_until[owner] = max(self.blocked_until.get(owner, 0), merge.end)
        self.gc_log.append(merge.log_row())
        self._gc_now.append(merge)

    # ------------------------------------------------------------- request
    def _process(self, i: int, T: int, app: int, vaddr: int, op: int, pc: int, warp: int) -> int:
        l2 = self.l2
        be = self.backend
        line = vaddr >> 7
        self.clock.now = T
        tr = None
        if self.zng:
            tr = be.ftl.translate(vaddr, op, address=False)
            t_tr = self._tlb[0] if tr.tlb_hit else self._tlb[1]
        else:
            t_tr = self._tlb[0]
        icnt = self._icnt
        rc, wc = self._l2rw
        bank = l2.bank_tl[(line % l2.n_sets) % l2.banks]
        t = T + t_tr + icnt
        arr = xfer = 0
        if op == 0:
            do_pf = False
            if l2.pf.enabled:
                do_pf = l2.predictor.update(pc, warp, vaddr // self._page_size) > l2.pf.threshold
            e = l2.find(line)
            t_l2 = bank.reserve(t, rc) + rc
            cache_c = rc
            if e is not None:
                l2.hits += 1
                if not e.accessed:
                    l2.touch(e)
                done = (t_l2 if t_l2 > e.ready else e.ready) + icnt
                version = e.version
                net = 2 * icnt
            else:
                l2.note_miss()
                start, n = l2.fetch_window(line, do_pf)
                back, versions, arr, xfer = be.read(t_l2 + icnt, vaddr, tr, start, n)
                if versions is None:
                    mem = self.mem
                    versions = [mem.get(ln, 0) for ln in range(start, start + n)]
                version = versions[line - start]
                ready = bank.reserve(back, wc) + wc
                l2.fill(line, version, ready, False, app)
                if n > 1:
                    self.prefetch_issued += n - 1
                    for k in range(n):
                        ln = start + k
                        if ln != line and not l2.contains(ln):
                            l2.fill(ln, versions[k], l2.bank_access(ln, back, wc), True, app)
                done = ready + icnt
                cache_c += wc
                net = 3 * icnt
            if self.read_log is not None:
                self.read_log[i] = version
        else:
            version = i + 1
            if not self.zng:
                self.mem[line] = version
            if l2.pin_active or l2.contains_pinned(line):
                t_l2 = bank.reserve(t, wc) + wc
                victim = l2.write_pinned(line, version, t_l2, app)
                if victim is not None:
                    self.background_writes += 1
                    be.write(t_l2, victim.line << 7, None, victim.version, victim.app, True)
                    if self.redirection:
                        self._redirect(t_l2)
                done = t_l2 + icnt
                cache_c = wc
                net = 2 * icnt
            else:
                l2.invalidate(line)
                t_l2 = bank.reserve(t, rc) + rc
                back, arr, xfer = be.write(t_l2 + icnt, vaddr, tr, version, app)
                done = back + icnt
                cache_c = rc
                net = 3 * icnt
                if self.redirection:
                    self._redirect(back)
        if self._gc_now:
            for m in self._gc_now:
                if m.app == app and m.start <= done < m.end:
                    done = m.end
            self._gc_now.clear()
        lat = self.lat
        lat["translation"] += t_tr
        lat["network"] += net
        lat["cache"] += cache_c
        lat["array"] += arr
        lat["transfer"] += xfer
        self.lat_total += done - T
        return done

    def _redirect(self, t: int) -> None:
        thrashing = bool(self.backend.thrashing)
        l2 = self.l2
        if thrashing and not l2.pin_active:
            l2.pin_region()
        elif not thrashing and l2.pin_active:
            for e in l2.unpin_region():
                self.background_writes += 1
                self.backend.write(t, e.line << 7, None, e.version, e.app, True)

    # ----------------------------------------------------------------- run
    def run(self) -> MetricsReport:
        tr = self.trace
        rec = tr.records
        n = len(rec)
        cfg = self.cfg
        issue = rec["issue_cycle"].astype(np.int64).tolist()
        vaddr = rec["vaddr"].astype(np.int64).tolist()
        pcs = rec["pc"].astype(np.int64).tolist()
        warps = rec["warp_id"].astype(np.int64).tolist()
        apps = rec["app_id"].astype(np.int64).tolist()
        ops = rec["op"].astype(np.int64).tolist()
        if self.record_reads:
            self.read_log = {}
        app_ids = sorted(set(apps))
        order = {a: [] for a in app_ids}
        for i, a in enumerate(apps):
            order[a].append(i)
        if self.zng:
            bb = cfg.geometry.block_bytes
            for a in app_ids:
                blocks = np.unique(rec["vaddr"][rec["app_id"] == a] // bb)
                self.backend.ftl.register(a, blocks.tolist())

        q = EventQueue()
        heap = q.heap
        cursor = dict.fromkeys(app_ids, 0)
        next_t = dict.fromkeys(app_ids, 0)
        waiting: dict[int, int | None] = dict.fromkeys(app_ids)
        out: dict[tuple, int] = {}
        cap = cfg.warp_cap
        completions = {a: [] for a in app_ids}
        blocked = self.blocked_until
        app_last = self.app_last
        process = self._process
        heappush = heapq.heappush
        next_seq = q.next_seq

        def try_issue(a: int, T: int) -> None:
            lst = order[a]
            k = cursor[a]
            while k < len(lst):
                i = lst[k]
                b = blocked.get(a, 0)
                if T < b:
                    q.push(b, ISSUE, a)
                    break
                ic = issue[i]
                if ic > T:
                    q.push(ic, ISSUE, a)
                    break
                w = warps[i]
                ow = out.get((a, w), 0)
                if ow >= cap:
                    waiting[a] = w
                    break
                if heap and heap[0][0] < T:
                    q.push(T, ISSUE, a)
                    break
                done = process(i, T, a, vaddr[i], ops[i], pcs[i], w)
                out[(a, w)] = ow + 1
                if done > app_last.get(a, 0):
                    app_last[a] = done
                # done >= T >= q.now, so the past check of push is not needed
                heappush(heap, (done, next_seq(), COMPLETE, a, w))
                k += 1
                T += 1
            cursor[a] = k
            next_t[a] = T

        for a in app_ids:
            if order[a]:
                q.push(max(issue[order[a][0]], 0), ISSUE, a)
        pop = q.pop
        while heap:
            time, _, kind, a, w = pop()
            if kind == COMPLETE:
                out[(a, w)] -= 1
                completions[a].append(time)
                if waiting[a] == w:
                    waiting[a] = None
                    try_issue(a, max(time, next_t[a]))
            elif waiting[a] is None:
                try_issue(a, max(time, next_t[a]))
        end = max((c[-1] for c in completions.values() if c), default=0)
        self._drain(end)
        return self._report(end, completions, n, ops, vaddr)

    def _drain(self, t: int) -> None:
        l2 = self.l2
        for e in l2.drain_pinned():
            self.background_writes += 1
            self.backend.write(t, e.line << 7, None, e.version, e.app, True)
        self.backend.drain(t)

    # -------------------------------------------------------------- report
    def _report(self, end: int, completions: dict, n: int, ops: list, vaddr: list) -> MetricsReport:
        cfg = self.cfg
        be = self.backend
        c = be.counters()
        ps = cfg.geometry.page_size
        pages = np.asarray(vaddr, dtype=np.int64) // ps if n else np.zeros(0, np.int64)
        opa = np.asarray(ops, dtype=np.int8)
        n_writes = int(opa.sum()) if n else 0
        req_read_hist = histogram(np.unique(pages[opa == 0], return_counts=True)[1]) if n else {}
        req_write_hist = histogram(np.unique(pages[opa == 1], return_counts=True)[1]) if n else {}
        page_reads = getattr(be, "page_reads", {})
        page_programs = getattr(be, "page_programs", {})
        arr_read_hist = histogram(page_reads.values())
        arr_prog_hist = histogram(page_programs.values())
        secs = end / (cfg.clock_mhz * 1e6) if end else 0.0
        moved = (c["reads"] + c["programs"]) * ps
        gbps = round(moved / secs / 1e9, 6) if secs else 0.0
        eff = round(n * 128 / secs / 1e9, 6) if secs else 0.0
        total = self.lat_total
        lat = {k: round(v / n, 3) if n else 0.0 for k, v in self.lat.items()}
        mean = round(total / n, 3) if n else 0.0
        lat["queueing"] = round(mean - sum(lat.values()), 3)
        lat["mean"] = mean
        per_app = {}
        epoch = cfg.epoch_cycles
        n_epochs = end // epoch + 1 if end else 0
        series = {"epoch_cycles": epoch, "apps": {}}
        for a, comp in completions.items():
            arr = np.asarray(comp, dtype=np.int64)
            per_app[str(a)] = {"requests": int(arr.size), "completion_time": int(arr.max()) if arr.size else 0}
            series["apps"][a] = np.bincount(arr // epoch, minlength=n_epochs).tolist() if arr.size else []
        l2s = self.l2.stats()
        l2s["prefetch_issued"] = self.prefetch_issued
        gc_stats = {"events": len(self.gc_log), "log": self.gc_log,
                    "pages_moved": sum(g["pages_moved"] for g in self.gc_log)}
        c["background_writes"] = self.background_writes
        return MetricsReport(
            platform=cfg.platform, requests=n, reads=n - n_writes, writes=n_writes,
            completion_time=int(end), completion_time_us=round(end / cfg.clock_mhz, 3),
            array_reads=int(c["reads"]), array_programs=int(c["programs"]), array_erases=int(c["erases"]),
            array_bandwidth_gbps=gbps, effective_bandwidth_gbps=eff,
            read_reaccess={"requests": req_read_hist, "request_mean": _mean_from_hist(req_read_hist),
                           "array": arr_read_hist, "array_mean": _mean_from_hist(arr_read_hist)},
            write_redundancy={"requests": req_write_hist, "request_mean": _mean_from_hist(req_write_hist),
                              "array": arr_prog_hist, "array_mean": _mean_from_hist(arr_prog_hist)},
            latency=lat, cache=l2s, gc=gc_stats, per_app=per_app, counters=c, series=series)


def run(cfg: PlatformConfig, trace: Trace) -> MetricsReport:
    return Simulator(cfg, trace).run()


def compare(platforms, trace: Trace, base: PlatformConfig | None = None,
            reference: str = "zng") -> list[dict]:
    """Completion time per platform, normalized to ``reference`` (first platform if absent)."""
    names = list(platforms)
    if len(names) < 2:
        raise ValueError("compare needs at least two platforms")
    reports = [run(platform_config(p, base=base), trace) for p in names]
    ref = names.index(reference) if reference in names else 0
    rt = reports[ref].completion_time or 1
    rows = []
    for p, r in zip(names, reports):
        rows.append({"platform": p, "completion_time": r.completion_time,
                     "normalized": round(r.completion_time / rt, 4) if r.completion_time else 1.0,
                     "speedup_vs_ref": round(rt / r.completion_time, 4) if r.completion_time else 1.0,
                     "array_bandwidth_gbps": r.array_bandwidth_gbps})
    return rows


def oracle_reads(trace: Trace) -> dict[int, int]:
    """Reference read results: each read returns the index+1 of the last write to its line."""
    mem: dict[int, int] = {}
    out = {}
    rec = trace.records
    for i, (va, op) in enumerate(zip(rec["vaddr"].tolist(), rec["op"].tolist())):
        if op:
            mem[va >> 7] = i + 1
        else:
            out[i] = mem.get(va >> 7, 0)
    return out
