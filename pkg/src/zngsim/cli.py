"""Command-line front end.

Subcommands: ``trace-gen``, ``run``, ``sweep``, ``validate`` and
``dump-tables``. Exit codes are 0 on success, 2 for usage or config
errors and 1 for runtime failures. ``ZNG_SIM_THREADS`` caps how many
simulations run in parallel.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .config import PLATFORMS, ConfigError, config_from_partial, validate_config_dict
from .engine import MetricsReport, Simulator
from .errors import TraceFormatError, ZngError
from .trace import Trace, TraceSpec, default_mixed_spec, generate_trace, load_trace, mixed_spec, workload_spec, \
    write_trace

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

# sweepable knobs and the config keys they set
KNOBS = {
    "high_threshold": "prefetch.high_threshold",
    "low_threshold": "prefetch.low_threshold",
    "granularity": "prefetch.initial_granularity",
    "group_size": "geometry.group_size",
    "topology": "registers.topology",
    "registers": "registers.per_plane",
}


class UsageError(ZngError):
    module = "cli"


@dataclass
class RunManifest:
    out: Path
    platforms: list[str]
    config: dict = field(default_factory=dict)
    trace: Path | None = None
    spec: dict | None = None
    seed: int | None = None
    epoch: int | None = None
    length: int = 50_000

    def check(self) -> None:
        if not self.platforms:
            raise UsageError("platform list is empty")
        bad = [p for p in self.platforms if p not in PLATFORMS]
        if bad:
            raise UsageError(f"unknown platforms {bad}; expected from {list(PLATFORMS)}")
        if self.trace is not None and self.spec is not None:
            raise UsageError("give either a trace file or a generator spec, not both")


# ---------------------------------------------------------------- loading
def _read_json(path: str | Path, what: str) -> dict:
    try:
        d = json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read {what} {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{what} {path} is not valid JSON: {exc}") from None
    if not isinstance(d, dict):
        raise UsageError(f"{what} {path} must hold a JSON object")
    return d


def spec_from_dict(d: dict) -> TraceSpec:
    """Generator spec from JSON.

    Besides plain ``TraceSpec`` fields, ``{"workload": name}`` selects a
    named synthetic workload and ``{"workloads": [names]}`` a co-run mix;
    ``length`` and ``seed`` apply to either.
    """
    d = dict(d)
    if "workloads" in d:
        names = d.pop("workloads")
        spec = mixed_spec(names, length=d.pop("length", 50_000), seed=d.pop("seed", 0))
    elif "workload" in d:
        spec = workload_spec(d.pop("workload"), length=d.pop("length", 50_000), seed=d.pop("seed", 0), **d)
        d = {}
    else:
        spec = TraceSpec.from_dict(d)
        d = {}
    if d:
        raise ConfigError(f"unknown trace spec keys {sorted(d)}")
    spec.check()
    return spec


def _reseed(spec: TraceSpec, seed: int | None) -> TraceSpec:
    if seed is None:
        return spec
    if spec.generator == "mixed-app":
        subs = tuple(TraceSpec.from_dict({**s.to_dict(), "seed": seed + i}) for i, s in enumerate(spec.per_app))
        return TraceSpec.from_dict({**spec.to_dict(), "seed": seed, "per_app": [s.to_dict() for s in subs]})
    return TraceSpec.from_dict({**spec.to_dict(), "seed": seed})


def manifest_from_args(args, default_platforms=PLATFORMS) -> RunManifest:
    """Merge a manifest file with command-line flags; flags win.

    Paths inside a manifest are relative to the manifest's directory.
    """
    base: dict = {}
    if getattr(args, "manifest", None):
        base = _read_json(args.manifest, "manifest")
        unknown = set(base) - {"config", "trace", "spec", "out", "seed", "platforms", "epoch", "length"}
        if unknown:
            raise UsageError(f"unknown manifest keys {sorted(unknown)}")
        root = Path(args.manifest).resolve().parent
        for k in ("config", "trace", "spec", "out"):
            if isinstance(base.get(k), str):
                base[k] = str(root / base[k])
    for k in ("config", "trace", "spec", "out", "seed", "platforms", "epoch", "length"):
        v = getattr(args, k, None)
        if v is not None:
            base[k] = v
    if base.get("out") is None:
        raise UsageError("an output directory is required (--out)")
    platforms = base.get("platforms") or list(default_platforms)
    if isinstance(platforms, str):
        platforms = [p for p in platforms.split(",") if p]
    config = base.get("config") or {}
    if isinstance(config, str):
        config = _read_json(config, "config")
    problems = validate_config_dict(config)
    if problems:
        raise ConfigError("; ".join(problems))
    spec = base.get("spec")
    if isinstance(spec, str):
        spec = _read_json(spec, "trace spec")
    trace = base.get("trace")
    m = RunManifest(out=Path(base["out"]), platforms=list(platforms), config=config,
                    trace=Path(trace) if trace else None, spec=spec, seed=base.get("seed"),
                    epoch=base.get("epoch"), length=base.get("length") or 50_000)
    m.check()
    return m


def load_manifest_trace(m: RunManifest) -> tuple[Trace, str]:
    if m.trace is not None:
        if not m.trace.is_file():
            raise UsageError(f"trace file {m.trace} does not exist")
        return load_trace(m.trace), m.trace.stem
    if m.spec is not None:
        spec = _reseed(spec_from_dict(m.spec), m.seed)
    else:
        spec = default_mixed_spec(length=m.length, seed=m.seed or 0)
    return generate_trace(spec), spec.name or spec.generator


def platform_cfg(config: dict, platform: str, epoch: int | None = None):
    """File values are applied on top of the platform preset."""
    d = {k: v for k, v in config.items() if k != "platform"}
    if epoch is not None:
        d["epoch_cycles"] = epoch
    return config_from_partial({**d, "platform": platform})


# ---------------------------------------------------------------- running
def threads() -> int:
    raw = os.environ.get("ZNG_SIM_THREADS")
    cpus = os.cpu_count() or 1
    if raw is None:
        return cpus
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"ZNG_SIM_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("ZNG_SIM_THREADS must be at least 1")
    return min(n, cpus)


def _simulate(job) -> MetricsReport:
    cfg, trace = job
    return Simulator(cfg, trace).run()


def run_many(jobs: list) -> list[MetricsReport]:
    """Run independent (config, trace) jobs; result order matches ``jobs``."""
    n = min(threads(), len(jobs))
    if n <= 1:
        return [_simulate(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(_simulate, jobs))


def summary_rows(reports: list[MetricsReport], reference: str = "zng") -> list[dict]:
    names = [r.platform for r in reports]
    ref = reports[names.index(reference)] if reference in names else reports[0]
    rt = ref.completion_time
    rows = []
    for r in reports:
        ct = r.completion_time
        rows.append({"platform": r.platform, "completion_time": ct,
                     "normalized_time": round(ct / rt, 4) if rt else 1.0,
                     "speedup": round(rt / ct, 4) if ct else 1.0,
                     "array_reads": r.array_reads, "array_programs": r.array_programs,
                     "array_bandwidth_gbps": r.array_bandwidth_gbps, "gc_events": r.gc["events"]})
    return rows


def format_table(rows: list[dict], cols: list[str]) -> str:
    cells = [[str(r[c]) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    lines += ["  ".join(v.rjust(w) if i else v.ljust(w) for i, (v, w) in enumerate(zip(row, widths))) for row in cells]
    return "\n".join(lines)


def _write_csv(path: Path, rows: list[dict]) -> None:
    with path.open("w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


# --------------------------------------------------------------- commands
def cmd_trace_gen(args) -> int:
    spec = _reseed(spec_from_dict(_read_json(args.spec, "trace spec")), args.seed)
    trace = generate_trace(spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_trace(trace, out)
    print(f"wrote {len(trace)} requests to {out} ({len(trace.apps)} app(s), read ratio {trace.read_ratio:.4f})")
    return EXIT_OK


def cmd_run(args) -> int:
    m = manifest_from_args(args)
    cfgs = [platform_cfg(m.config, p, m.epoch) for p in m.platforms]
    trace, name = load_manifest_trace(m)
    reports = run_many([(c, trace) for c in cfgs])
    m.out.mkdir(parents=True, exist_ok=True)
    for r in reports:
        r.write(m.out, r.platform)
    rows = summary_rows(reports)
    _write_csv(m.out / "summary.csv", rows)
    print(f"trace {name}: {len(trace)} requests; reports in {m.out}")
    print(format_table(rows, ["platform", "completion_time", "normalized_time", "speedup", "gc_events"]))
    print(reports[0].note)
    return EXIT_OK


def parse_grid(items: list[str], grid_file: str | None) -> dict[str, list]:
    grid: dict[str, list] = {}
    if grid_file:
        for k, v in _read_json(grid_file, "grid").items():
            grid[k] = v if isinstance(v, list) else [v]
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"grid entries look like knob=v1,v2 (got {item!r})")
        k, v = item.split("=", 1)
        grid[k.strip()] = [json.loads(x) if x.strip()[:1] in "-.0123456789" else x.strip()
                           for x in v.split(",") if x.strip()]
    unknown = [k for k in grid if k not in KNOBS]
    if unknown:
        raise UsageError(f"unknown knob(s) {unknown}; valid knobs: {', '.join(KNOBS)}")
    if not grid:
        raise UsageError(f"empty grid; valid knobs: {', '.join(KNOBS)}")
    for k, vals in grid.items():
        if not vals:
            raise UsageError(f"knob {k} has no values")
    return grid


def cmd_sweep(args) -> int:
    grid = parse_grid(args.set, args.grid)
    m = manifest_from_args(args, default_platforms=("zng",))
    if len(m.platforms) != 1:
        raise UsageError("sweep takes exactly one platform")
    names = list(grid)
    points = [dict(zip(names, combo)) for combo in itertools.product(*(grid[k] for k in names))]
    cfgs = []
    for pt in points:
        d = json.loads(json.dumps(m.config))
        for k, v in pt.items():
            section, key = KNOBS[k].split(".")
            d.setdefault(section, {})[key] = v
        problems = validate_config_dict({**d, "platform": m.platforms[0]})
        if problems:
            raise ConfigError(f"grid point {pt}: " + "; ".join(problems))
        cfgs.append(platform_cfg(d, m.platforms[0], m.epoch))
    trace, name = load_manifest_trace(m)
    reports = run_many([(c, trace) for c in cfgs])
    rows = []
    for pt, r in zip(points, reports):
        rows.append({**pt, "completion_time": r.completion_time, "array_reads": r.array_reads,
                     "array_programs": r.array_programs, "read_reaccess_mean": r.read_reaccess_mean,
                     "write_redundancy_mean": r.write_redundancy_mean,
                     "predictor_accuracy": r.cache["predictor_accuracy"], "gc_events": r.gc["events"]})
    m.out.mkdir(parents=True, exist_ok=True)
    _write_csv(m.out / "sweep.csv", rows)
    best = min(rows, key=lambda r: r["completion_time"])
    print(f"trace {name}: {len(rows)} grid point(s) on {m.platforms[0]}; wrote {m.out / 'sweep.csv'}")
    print(format_table(rows, names + ["completion_time", "array_reads", "write_redundancy_mean"]))
    print("best: " + ", ".join(f"{k}={best[k]}" for k in names) + f" ({best['completion_time']} cycles)")
    return EXIT_OK


def cmd_validate(args) -> int:
    d = _read_json(args.config, "config")
    problems = validate_config_dict(d)
    if problems:
        for p in problems:
            print(f"{args.config}: {p}", file=sys.stderr)
        return EXIT_USAGE
    cfg = config_from_partial(d)
    print(f"{args.config}: ok (platform {cfg.platform})")
    return EXIT_OK


def cmd_dump_tables(args) -> int:
    m = manifest_from_args(args, default_platforms=(args.platform,))
    cfg = platform_cfg(m.config, m.platforms[0], m.epoch)
    if not cfg.is_zng:
        raise UsageError(f"{cfg.platform} has no mapping tables; use a zng platform")
    trace, _ = load_manifest_trace(m)
    sim = Simulator(cfg, trace)
    sim.run()
    tables = sim.backend.ftl.dump_tables()
    m.out.mkdir(parents=True, exist_ok=True)
    path = m.out / "tables.json"
    path.write_text(json.dumps(tables, sort_keys=True, indent=1) + "\n")
    print(f"wrote {len(tables['dbmt'])} DBMT and {len(tables['lbmt']['groups'])} LBMT entries to {path}")
    return EXIT_OK


# ----------------------------------------------------------------- parser
def _common(p: argparse.ArgumentParser, platforms: bool = True) -> None:
    p.add_argument("--manifest", help="JSON run manifest (flags override its fields)")
    p.add_argument("--config", help="JSON config applied on top of each platform preset")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--trace", help="trace file (binary or text)")
    src.add_argument("--spec", help="JSON generator spec")
    p.add_argument("--length", type=int, help="requests per app for the default mixed workload")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="generator seed")
    p.add_argument("--epoch", type=int, help="time-series epoch in cycles")
    if platforms:
        p.add_argument("--platforms", help=f"comma-separated subset of {','.join(PLATFORMS)}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="zngsim", description="GPU + Z-NAND memory hierarchy simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("trace-gen", help="generate a binary trace from a JSON spec")
    p.add_argument("spec")
    p.add_argument("out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_trace_gen)

    p = sub.add_parser("run", help="simulate one trace on a list of platforms")
    _common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="grid over documented knobs")
    _common(p)
    p.add_argument("--set", action="append", metavar="KNOB=V1,V2", help=f"knobs: {', '.join(KNOBS)}")
    p.add_argument("--grid", help="JSON object mapping knobs to value lists")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate", help="check a config file against the schema")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("dump-tables", help="run a trace and write DBMT/LBMT state as JSON")
    _common(p, platforms=False)
    p.add_argument("--platform", default="zng")
    p.set_defaults(func=cmd_dump_tables)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, TraceFormatError, UsageError) as exc:
        print(f"zngsim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ZngError as exc:
        print(f"zngsim: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, RuntimeError, ValueError) as exc:
        print(f"zngsim: error: [{args.command}] {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
