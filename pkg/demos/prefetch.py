"""Fetch granularity adapting to locality.

A sequential scan keeps the window at 4KB; a random walk wastes most
prefetched lines, so the window shrinks toward one line.
"""

from zngsim import platform_config
from zngsim.engine import run
from zngsim.trace import TraceSpec, generate_trace

cfg = platform_config("zng-rdopt", {"l2.capacity": 6 << 20, "prefetch.epoch_misses": 2048})
for gen in ("sequential", "uniform-random"):
    trace = generate_trace(TraceSpec(generator=gen, footprint=24 << 20, length=100_000))
    off = run(platform_config("zng-rdopt", {"l2.capacity": 6 << 20, "prefetch.enabled": False}), trace)
    r = run(cfg, trace)
    gs = r.cache["granularity_series"]
    print(f"{gen}: array reads {r.array_reads} (without prediction {off.array_reads}), "
          f"accuracy {r.cache['predictor_accuracy']}")
    print(f"  granularity per epoch: {gs[:12]}{' ...' if len(gs) > 12 else ''}")
