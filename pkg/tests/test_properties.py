from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from zngsim.engine import Simulator, oracle_reads
from zngsim.ftl import LOG
from zngsim.timeline import Clock, Timeline
from zngsim.trace import TraceSpec, generate_trace

from conftest import small_config

bookings = st.lists(st.tuples(st.integers(0, 2000), st.integers(1, 300)), max_size=60)


@given(bookings)
def test_timeline_bookings_never_overlap(items):
    tl = Timeline()
    booked = []
    for t, d in items:
        probed = tl.probe(t, d)
        s = tl.reserve(t, d)
        assert s == probed and s >= t
        booked.append((s, s + d))
    booked.sort()
    for (_, e0), (s1, _) in zip(booked, booked[1:]):
        assert e0 <= s1
    assert tl.busy == sum(d for _, d in items)
    assert all(a < b for a, b in zip(tl.starts, tl.starts[1:]))


@given(bookings, st.integers(0, 2500))
def test_timeline_pruning_keeps_future(items, now):
    clock = Clock()
    tl = Timeline(clock)
    for t, d in items:
        tl.reserve(t, d)
    ref = Timeline()
    ref.starts, ref.ends = list(tl.starts), list(tl.ends)
    clock.now = now
    for t in range(now, now + 400, 37):
        assert tl.probe(t, 25) == ref.probe(t, 25)


specs = st.builds(
    TraceSpec,
    generator=st.sampled_from(["uniform-random", "zipf", "sequential", "strided"]),
    read_ratio=st.floats(0.3, 1.0),
    footprint=st.sampled_from([64 << 10, 256 << 10, 512 << 10]),
    length=st.integers(200, 2500),
    seed=st.integers(0, 1000),
    n_warps=st.integers(1, 32),
    burst=st.integers(1, 8),
)


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(specs, st.sampled_from(["baseline", "swnet", "fcnet", "nif"]), st.booleans(), st.booleans())
def test_reads_match_oracle_any_topology(spec, topology, redirection, prefetch):
    trace = generate_trace(spec)
    cfg = small_config("zng", **{"registers.topology": topology, "registers.redirection": redirection,
                                 "prefetch.enabled": prefetch, "registers.per_plane": 2})
    sim = Simulator(cfg, trace, record_reads=True)
    rep = sim.run()
    assert sim.read_log == oracle_reads(trace)
    arr = sim.backend.array
    pages = arr.geo.pages
    # a block can hold at most one full program pass per erase
    for pbn, n in arr.block_programs.items():
        assert n <= pages * (arr.erase_count.get(pbn, 0) + 1)
    # every open block was filled front to back
    for pbn, cur in arr.cursor.items():
        assert all(pbn * pages + p in arr.content for p in range(cur) if arr.role[pbn] == LOG)
    assert rep.counters["interconnect"]["entered"] == rep.counters["interconnect"]["delivered"]


@settings(max_examples=10, deadline=None)
@given(specs)
def test_runs_are_deterministic(spec):
    trace = generate_trace(spec)
    cfg = small_config("zng")
    assert Simulator(cfg, trace).run().to_json() == Simulator(cfg, trace).run().to_json()
