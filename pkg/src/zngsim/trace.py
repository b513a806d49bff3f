"""L2-level memory request traces.

A trace is a time-ordered sequence of 128B requests that already passed
the coalescer and missed in L1. Records are kept in a numpy structured
array whose layout is the on-disk record layout, so binary I/O is a
single ``tofile``/``frombuffer``.

Binary format (little endian)::

    "ZNGT"  version:u16  count:u64
    count x { issue_cycle:u64 vaddr:u64 pc:u64 warp_id:u16 app_id:u8 op:u8 pad:u32 }

Text format, one request per line, ``#`` starts a comment::

    cycle op vaddr pc warp app        e.g.  "0 R 0x80 0x400 3 0"
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError, TraceFormatError, TraceValidationError

LINE = 128
READ = 0
WRITE = 1

MAGIC = b"ZNGT"
VERSION = 1
HEADER = struct.Struct("<4sHQ")

RECORD_DTYPE = np.dtype([
    ("issue_cycle", "<u8"),
    ("vaddr", "<u8"),
    ("pc", "<u8"),
    ("warp_id", "<u2"),
    ("app_id", "u1"),
    ("op", "u1"),
    ("pad", "<u4"),
])
assert RECORD_DTYPE.itemsize == 32

# Per-application base in the shared virtual space. A multiple of every
# block size used here (3 * 2**k * 4KB), so apps never share a block.
APP_STRIDE = 3 << 36


@dataclass(frozen=True, slots=True)
class MemoryRequest:
    issue_cycle: int
    warp_id: int
    pc: int
    op: int
    vaddr: int
    app_id: int = 0
    size: int = LINE

    @property
    def is_write(self) -> bool:
        return self.op == WRITE


class Trace:
    """Immutable request sequence backed by a structured array."""

    def __init__(self, records: np.ndarray | None = None):
        if records is None:
            records = np.zeros(0, dtype=RECORD_DTYPE)
        if records.dtype != RECORD_DTYPE:
            raise TypeError("records must use RECORD_DTYPE")
        self.records = records

    @classmethod
    def from_requests(cls, requests: Sequence[MemoryRequest]) -> "Trace":
        rec = np.zeros(len(requests), dtype=RECORD_DTYPE)
        for i, r in enumerate(requests):
            rec[i] = (r.issue_cycle, r.vaddr, r.pc, r.warp_id, r.app_id, r.op, 0)
        return cls(rec)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[MemoryRequest]:
        r = self.records
        cols = zip(r["issue_cycle"].tolist(), r["warp_id"].tolist(), r["pc"].tolist(),
                   r["op"].tolist(), r["vaddr"].tolist(), r["app_id"].tolist())
        for c, w, pc, op, va, app in cols:
            yield MemoryRequest(c, w, pc, op, va, app)

    def __getitem__(self, i: int) -> MemoryRequest:
        x = self.records[i]
        return MemoryRequest(int(x["issue_cycle"]), int(x["warp_id"]), int(x["pc"]),
                             int(x["op"]), int(x["vaddr"]), int(x["app_id"]))

    def __eq__(self, other) -> bool:
        return isinstance(other, Trace) and np.array_equal(self.records, other.records)

    @property
    def read_ratio(self) -> float:
        if not len(self):
            return 0.0
        return float(np.count_nonzero(self.records["op"] == READ)) / len(self)

    @property
    def apps(self) -> list[int]:
        return sorted(set(self.records["app_id"].tolist()))

    def validate(self) -> None:
        r = self.records
        bad = np.nonzero(r["vaddr"] % LINE)[0]
        if len(bad):
            raise TraceValidationError("vaddr is not 128-byte aligned", int(bad[0]))
        bad = np.nonzero(r["op"] > WRITE)[0]
        if len(bad):
            raise TraceValidationError("op must be 0 (read) or 1 (write)", int(bad[0]))
        if len(r) > 1:
            back = np.nonzero(np.diff(r["issue_cycle"].astype(np.int64)) < 0)[0]
            if len(back):
                raise TraceValidationError("issue_cycle decreases", int(back[0]) + 1)


def write_trace(trace: Trace, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, len(trace)))
        fh.write(trace.records.tobytes())


def write_text_trace(trace: Trace, path: str | Path) -> None:
    with open(path, "w") as fh:
        fh.write("# cycle op vaddr pc warp app\n")
        for r in trace:
            fh.write(f"{r.issue_cycle} {'W' if r.op else 'R'} {r.vaddr:#x} {r.pc:#x} {r.warp_id} {r.app_id}\n")


def load_trace(path: str | Path) -> Trace:
    """Read a binary or text trace; the format is detected from the magic."""
    data = Path(path).read_bytes()
    if data[:4] == MAGIC:
        trace = _parse_binary(data)
    else:
        trace = _parse_text(data.decode("utf-8", errors="replace"))
    trace.validate()
    return trace


def _parse_binary(data: bytes) -> Trace:
    if len(data) < HEADER.size:
        raise TraceFormatError("truncated header")
    _, version, count = HEADER.unpack_from(data)
    if version != VERSION:
        raise TraceFormatError(f"unsupported trace version {version}")
    body = data[HEADER.size:]
    if len(body) % RECORD_DTYPE.itemsize:
        raise TraceFormatError("partial record", len(body) // RECORD_DTYPE.itemsize)
    n = len(body) // RECORD_DTYPE.itemsize
    if n != count:
        raise TraceFormatError(f"header announces {count} records, file holds {n}", min(n, count))
    return Trace(np.frombuffer(body, dtype=RECORD_DTYPE).copy())


_OPS = {"r": READ, "read": READ, "0": READ, "w": WRITE, "write": WRITE, "1": WRITE}


def _parse_text(text: str) -> Trace:
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 6:
            raise TraceFormatError(f"expected 6 fields, got {len(parts)}", lineno)
        try:
            cycle = int(parts[0], 0)
            op = _OPS[parts[1].lower()]
            vaddr, pc, warp, app = (int(p, 0) for p in parts[2:])
        except (KeyError, ValueError):
            raise TraceFormatError(f"cannot parse {line!r}", lineno) from None
        if min(cycle, vaddr, pc, warp, app) < 0 or warp > 0xFFFF or app > 0xFF:
            raise TraceFormatError("field out of range", lineno)
        if vaddr % LINE:
            raise TraceValidationError("vaddr is not 128-byte aligned", lineno)
        if rows and cycle < rows[-1][0]:
            raise TraceValidationError("issue_cycle decreases", lineno)
        rows.append((cycle, vaddr, pc, warp, app, op, 0))
    return Trace(np.array(rows, dtype=RECORD_DTYPE) if rows else None)


# ---------------------------------------------------------------- generation

GENERATORS = ("sequential", "strided", "uniform-random", "zipf", "mixed-app")


@dataclass(frozen=True)
class TraceSpec:
    generator: str = "sequential"
    read_ratio: float = 1.0
    footprint: int = 4 << 20
    length: int = 10_000
    seed: int = 0
    per_app: tuple["TraceSpec", ...] = ()
    n_warps: int = 32
    burst: int = 4
    issue_interval: int = 1
    stride: int = 4096
    zipf_s: float = 0.99
    run: int = 1
    pc: int = 0x400
    name: str = ""

    def check(self) -> None:
        if self.generator not in GENERATORS:
            raise ConfigError(f"unknown generator {self.generator!r}; expected one of {GENERATORS}")
        if self.generator == "mixed-app":
            if not self.per_app:
                raise ConfigError("mixed-app needs at least one per_app spec")
            if len(self.per_app) > 255:
                raise ConfigError("at most 255 co-running apps")
            for sub in self.per_app:
                if sub.generator == "mixed-app":
                    raise ConfigError("mixed-app specs cannot nest")
                sub.check()
            return
        if not 0.0 <= self.read_ratio <= 1.0:
            raise ConfigError("read_ratio must be in [0, 1]")
        if self.length <= 0:
            raise ConfigError("length must be positive")
        if self.footprint < LINE:
            raise ConfigError("footprint must hold at least one 128B line")
        if self.n_warps < 1 or self.burst < 1 or self.issue_interval < 0 or self.run < 1:
            raise ConfigError("n_warps, burst and run must be positive")
        if self.generator == "strided" and (self.stride % LINE or self.stride <= 0):
            raise ConfigError("stride must be a positive multiple of 128")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["per_app"] = [s.to_dict() for s in self.per_app]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TraceSpec":
        d = dict(d)
        d["per_app"] = tuple(cls.from_dict(s) for s in d.get("per_app", ()))
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown trace spec keys {sorted(unknown)}")
        return cls(**d)


def generate_trace(spec: TraceSpec) -> Trace:
    spec.check()
    if spec.generator == "mixed-app":
        parts = [_generate_single(sub, np.random.default_rng([spec.seed, i, sub.seed]), app_id=i)
                 for i, sub in enumerate(spec.per_app)]
        rec = np.concatenate(parts)
        order = np.lexsort((rec["app_id"], rec["issue_cycle"]))
        return Trace(rec[order])
    return Trace(_generate_single(spec, np.random.default_rng(spec.seed), app_id=0))


def _generate_single(spec: TraceSpec, rng: np.random.Generator, app_id: int) -> np.ndarray:
    n = spec.length
    lines = max(1, spec.footprint // LINE)
    idx = np.arange(n, dtype=np.int64)
    g = spec.generator
    if g == "sequential":
        line = idx % lines
    elif g == "strided":
        per_row = max(1, min(lines, spec.stride // LINE))
        rows = max(1, lines // per_row)
        # walk a row-major array column by column
        line = ((idx % rows) * per_row + (idx // rows) % per_row) % lines
    elif g == "uniform-random":
        line = rng.integers(0, lines, size=n)
    elif g == "zipf":
        # popularity is drawn per segment of ``run`` consecutive lines and
        # each visit reads its segment front to back (edge-list style)
        run = min(spec.run, lines)
        segs = max(1, lines // run)
        visits = -(-n // run)
        ranks = np.arange(1, segs + 1, dtype=np.float64)
        cdf = np.cumsum(ranks ** -spec.zipf_s)
        cdf /= cdf[-1]
        hot = np.minimum(np.searchsorted(cdf, rng.random(visits), side="right"), segs - 1)
        seg = rng.permutation(segs)[hot]
        line = (np.repeat(seg, run)[:n] * run + idx % run) % lines
    else:  # pragma: no cover - check() rejects it
        raise ConfigError(g)

    op = np.zeros(n, dtype=np.uint8)
    n_writes = n - int(round(spec.read_ratio * n))
    if n_writes:
        op[rng.choice(n, size=n_writes, replace=False)] = WRITE

    rec = np.zeros(n, dtype=RECORD_DTYPE)
    rec["issue_cycle"] = idx * spec.issue_interval
    rec["vaddr"] = app_id * APP_STRIDE + line * LINE
    rec["warp_id"] = (idx // spec.burst) % spec.n_warps
    rec["pc"] = spec.pc + 4 * op.astype(np.uint64)
    rec["app_id"] = app_id
    rec["op"] = op
    return rec


# ------------------------------------------------------------- workload zoo

# read ratios of the benchmark suite the synthetic mixes are calibrated to
READ_RATIOS = {
    "betw": 0.98, "bfs1": 0.95, "bfs2": 0.99, "bfs3": 0.88, "bfs4": 0.97, "bfs5": 0.99,
    "bfs6": 0.97, "gc1": 0.98, "gc2": 0.99, "sssp3": 0.98, "deg": 1.0, "pr": 0.99,
    "back": 0.57, "gaus": 0.66, "FDT": 0.73, "gram": 0.75,
}

GRAPH_WORKLOADS = {k for k in READ_RATIOS if k[:3] in ("bet", "bfs", "gc1", "gc2", "sss", "deg", "pr")}


def workload_spec(name: str, length: int = 50_000, seed: int = 0, **kw) -> TraceSpec:
    """Synthetic stand-in for a named benchmark.

    Graph kernels become Zipf-distributed reads over a 64MB footprint;
    the scientific kernels become column-walks (strided) over a small
    array, which concentrates their writes on a handful of pages.
    """
    if name not in READ_RATIOS:
        raise ConfigError(f"unknown workload {name!r}")
    if name in GRAPH_WORKLOADS:
        base = dict(generator="zipf", footprint=64 << 20, n_warps=48, burst=8, run=8)
    else:
        base = dict(generator="strided", footprint=160 << 10, stride=4096, n_warps=16, burst=1, issue_interval=2)
    base.update(kw)
    return TraceSpec(read_ratio=READ_RATIOS[name], length=length, seed=seed, name=name, **base)


def mixed_spec(names: Sequence[str], length: int = 50_000, seed: int = 0) -> TraceSpec:
    subs = tuple(workload_spec(n, length=length, seed=seed + i) for i, n in enumerate(names))
    return TraceSpec(generator="mixed-app", per_app=subs, seed=seed, name="-".join(names),
                     length=sum(s.length for s in subs))


def default_mixed_spec(length: int = 50_000, seed: int = 0) -> TraceSpec:
    """The read-intensive + write-intensive co-run used for ablations."""
    return mixed_spec(("betw", "back"), length=length, seed=seed)


def with_seed(spec: TraceSpec, seed: int) -> TraceSpec:
    return replace(spec, seed=seed)
