import pytest

from zngsim.config import Geometry
from zngsim.engine import Simulator
from zngsim.ftl import Ftl
from zngsim.interconnect import (PROGRAM, READ_ARRAY, REG_MOVE, REG_READ, REG_WRITE, FlashCommand,
                                 FlashController, Interconnect, MeshNetwork, sequence)
from zngsim.trace import TraceSpec, generate_trace
from zngsim.znand import ZNandArray, service_time

from conftest import small_config


def _controllers_for_blocks(g: Geometry, n: int) -> list[int]:
    ftl = Ftl(g, ZNandArray(g))
    ftl.register(0, range(n))
    icnt = Interconnect(g.channels)
    return [icnt.dispatch(ftl.translate(v * g.block_bytes).addr) for v in range(n)]


def test_sequential_blocks_spread_over_controllers():
    assert sorted(_controllers_for_blocks(Geometry(), 16)) == list(range(16))


def test_single_channel_uses_controller_zero():
    g = Geometry(channels=1, packages=2, dies=1, planes=2, blocks=64, pages=16)
    assert set(_controllers_for_blocks(g, 8)) == {0}


def test_queue_depth_backpressure():
    c = FlashController(0, depth=8)
    starts = []
    for _ in range(9):
        s = c.acquire(100)
        starts.append(s)
        c.release(s, s + 50)
    assert c.stalls == 1 and starts[-1] == 150 and c.stall_cycles == 50


def test_read_miss_sequence_timing():
    cmds = sequence("read", None, 7, register_hit=False, nbytes=128)
    assert [c.kind for c in cmds] == [READ_ARRAY, REG_READ]
    total = service_time("read") + service_time("transfer", cmds[1].size)
    assert total == 3600 + 24


def test_register_hit_sequences():
    assert [c.kind for c in sequence("read", None, 7, register_hit=True)] == [REG_READ]
    assert [c.kind for c in sequence("write", None, 7, register_hit=True)] == [REG_WRITE]
    evicting = sequence("write", None, 7, evict_key=3)
    assert [c.kind for c in evicting] == [REG_MOVE, PROGRAM, REG_WRITE]


def test_prefetch_sequence_timing():
    cmds = sequence("prefetch", None, 7, nbytes=4096)
    assert [c.kind for c in cmds] == [READ_ARRAY, REG_READ]
    assert service_time("transfer", cmds[1].size) == 768      # 640 ns


def test_command_size_bounded():
    with pytest.raises(ValueError):
        FlashCommand(REG_READ, None, 0, 8192).check()
    with pytest.raises(ValueError):
        sequence("trim", None, 0)


def test_route_same_node_is_serialization_only():
    m = MeshNetwork(4, 2)
    assert m.route(128, (1, 1), (1, 1), 10) == 10 + 16


def test_route_two_hops():
    m = MeshNetwork(4, 2)
    assert m.route(128, (0, 0), (2, 0), 0) == 2 + 16
    assert m.route(128, (3, 1), (3, 0), 0) == 1 + 16


def test_route_rejects_unknown_node():
    with pytest.raises(ValueError):
        MeshNetwork(2, 1).route(8, (0, 0), (5, 0), 0)


def test_two_flows_share_a_link():
    m = MeshNetwork(2, 1)
    n = 200
    done = {"a": [], "b": []}
    for k in range(n):
        for f in ("a", "b"):
            done[f].append(m.route(128, (0, 0), (1, 0), 0))
    window = max(done["a"] + done["b"])
    # the link moves 8 bytes per cycle in total; each flow gets about half
    assert window >= 2 * n * 16
    for f in done:
        rate = n * 128 / window
        assert rate == pytest.approx(4.0, rel=0.02)
    assert abs(max(done["a"]) - max(done["b"])) <= 16


def test_requests_conserved():
    spec = TraceSpec(generator="uniform-random", length=4000, footprint=512 * 1024, read_ratio=0.6, seed=3)
    sim = Simulator(small_config("zng"), generate_trace(spec))
    rep = sim.run()
    ic = rep.counters["interconnect"]
    assert ic["entered"] == ic["delivered"] > 0
