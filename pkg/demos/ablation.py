"""Every platform on the read/write co-run, normalized to zng.

    python demos/ablation.py [requests-per-app]
"""

import sys

from zngsim import platform_config
from zngsim.config import PLATFORMS
from zngsim.engine import run
from zngsim.trace import default_mixed_spec, generate_trace

length = int(sys.argv[1]) if len(sys.argv) > 1 else 10_000
trace = generate_trace(default_mixed_spec(length=length))
print(f"{len(trace)} requests, read ratio {trace.read_ratio:.3f}")

reports = {p: run(platform_config(p), trace) for p in PLATFORMS}
ref = reports["zng"].completion_time
print(f"{'platform':<10} {'cycles':>14} {'vs zng':>10} {'array GB/s':>11} {'merges':>7}")
for p, r in reports.items():
    print(f"{p:<10} {r.completion_time:>14} {r.completion_time / ref:>10.2f} "
          f"{r.array_bandwidth_gbps:>11.3f} {r.gc['events']:>7}")
print(reports["zng"].note)
