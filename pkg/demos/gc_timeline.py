"""Per-epoch completions of two apps around one merge.

App 0 only reads; app 1 writes enough to fill its log blocks. While a
merge runs, app 1 is held off the flash and app 0 keeps completing.
"""

from zngsim import platform_config
from zngsim.engine import run
from zngsim.trace import TraceSpec, generate_trace

spec = TraceSpec(generator="mixed-app", per_app=(
    TraceSpec(generator="zipf", read_ratio=1.0, footprint=4 << 20, length=60_000, n_warps=48, burst=8,
              run=8, seed=1, issue_interval=1000),
    TraceSpec(generator="uniform-random", read_ratio=0.5, footprint=2 << 20, length=30_000, n_warps=16,
              burst=1, issue_interval=2, seed=2)))
cfg = platform_config("zng", {"geometry.channels": 4, "geometry.dies": 1, "geometry.planes": 4,
                              "geometry.blocks": 256, "geometry.pages": 32, "geometry.group_size": 2,
                              "epoch_cycles": 12_000})
r = run(cfg, generate_trace(spec))
ep = r.series["epoch_cycles"]
series = r.series["apps"]
g = r.gc["log"][0]
print(f"{r.gc['events']} merges; first: group {g['group']} owner app {g['app']} "
      f"cycles {g['start']}-{g['end']}, {g['pages_moved']} pages moved")
lo, hi = max(0, g["start"] // ep - 3), g["end"] // ep + 4
print("epoch  app0  app1")
for e in range(lo, min(hi, len(series[0]))):
    mark = " <- merge" if g["start"] // ep <= e <= g["end"] // ep else ""
    print(f"{e:>5} {series[0][e]:>5} {series[1][e] if e < len(series[1]) else 0:>5}{mark}")
