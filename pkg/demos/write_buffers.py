"""Write redundancy per register topology on one hot plane.

The hot set (160 pages) is larger than one plane's registers but fits
in its package, which is where sharing registers pays off.
"""

from zngsim import platform_config
from zngsim.engine import run
from zngsim.trace import TraceSpec, generate_trace

trace = generate_trace(TraceSpec(generator="uniform-random", footprint=160 * 4096, length=60_000,
                                 read_ratio=0.5, n_warps=16, burst=1))
geo = {"geometry.dies": 2}

print(f"{'design':<22} {'programs/page':>13} {'evictions':>10} {'remote':>8}")
for topo in ("baseline", "swnet", "fcnet", "nif"):
    r = run(platform_config("zng-wropt", {**geo, "registers.topology": topo}), trace)
    c = r.counters
    print(f"{topo:<22} {r.write_redundancy_mean:>13.2f} {c['register_evictions']:>10} "
          f"{c['register_remote_evictions']:>8}")
r = run(platform_config("zng", geo), trace)
print(f"{'nif + L2 redirection':<22} {r.write_redundancy_mean:>13.2f} {r.counters['register_evictions']:>10} "
      f"{r.counters['register_remote_evictions']:>8}   pinned writes {r.cache['pinned_writes']}")
