import random

from hypothesis import given
from hypothesis import strategies as st

from zngsim.cache import AccessMonitor, L2Cache, PredictorTable, TagEntry
from zngsim.config import L2Config, PrefetchConfig

SMALL_L2 = L2Config(capacity=6 * 8 * 128 * 4)


def test_repeated_read_misses_then_hits():
    l2 = L2Cache(SMALL_L2)
    r = l2.lookup(5, 0, pc=0x400, warp_id=0, page=0, now=0)
    assert not r.hit and r.miss_action.kind == "flash-read" and r.miss_action.window_lines == 1
    l2.fill(5, 1, ready=0)
    assert l2.lookup(5, 0, 0x400, 0, 0, now=10).hit


def test_confident_predictor_triggers_prefetch_window():
    l2 = L2Cache(SMALL_L2, PrefetchConfig(enabled=True))
    for _ in range(14):
        r = l2.lookup(40, 0, pc=0x400, warp_id=3, page=1, now=0)
    assert l2.predictor.counter[l2.predictor.index(0x400)] == 13
    assert r.miss_action.window_start == 32 and r.miss_action.window_lines == 32


def test_write_under_redirection_goes_to_pinned_way():
    l2 = L2Cache(SMALL_L2)
    l2.pin_region()
    r = l2.lookup(9, 1, 0x404, 0, 0, now=0)
    assert r.miss_action.kind == "pinned-write"
    l2.write_pinned(9, version=7, ready=0)
    e = l2.find(9)
    assert e.pinned and e.dirty and e.version == 7


def test_write_without_redirection_invalidates_clean_copy():
    l2 = L2Cache(SMALL_L2)
    l2.fill(9, 1, 0)
    r = l2.lookup(9, 1, 0x404, 0, 0, now=0)
    assert r.miss_action.kind == "flash-write" and not l2.contains(9)


def test_demand_fills_are_never_dirty():
    l2 = L2Cache(SMALL_L2)
    for line in range(2000):
        l2.fill(line, line, 0, prefetch=line % 3 == 0)
    assert not any(e.dirty for od in l2.sets if od for e in od.values())


# ---------------------------------------------------------------- predictor
def test_predictor_first_access():
    p = PredictorTable()
    assert p.predict(0x400, 1, 7) == (0, False)
    i = p.index(0x400)
    assert 1 in p.warps[i]


def test_predictor_same_page_run():
    p = PredictorTable()
    p.predict(0x400, 1, 7)
    for _ in range(13):
        c, pf = p.predict(0x400, 1, 7)
    assert (c, pf) == (13, True)


def test_predictor_alternating_pages():
    p = PredictorTable()
    for k in range(40):
        c, pf = p.predict(0x400, 1, k % 2)
        assert c == 0 and not pf


def test_predictor_warp_slots_round_robin():
    p = PredictorTable(warp_slots=5)
    for w in range(7):
        p.predict(0x400, w, 0)
    assert p.warps[p.index(0x400)] == [5, 6, 2, 3, 4]


def test_predictor_counter_saturates():
    p = PredictorTable()
    for _ in range(40):
        c, _ = p.predict(0x800, 0, 3)
    assert c == 15


# ------------------------------------------------------------------ monitor
def test_monitor_eviction_accounting():
    m = AccessMonitor()
    m.on_evict(TagEntry(1))
    assert (m.evict_counter, m.unused_counter) == (1, 0)
    m.on_evict(TagEntry(2, prefetch=True))
    assert (m.evict_counter, m.unused_counter) == (2, 1)


def test_waste_ratio():
    m = AccessMonitor()
    for i in range(10):
        m.on_evict(TagEntry(i, prefetch=i < 4))
    assert m.waste_ratio == 0.4


def _adjust(g, ratio):
    m = AccessMonitor(granularity=g)
    m.evict_counter, m.unused_counter = 100, round(ratio * 100)
    return m.adjust_granularity()


def test_granularity_rules():
    assert _adjust(4096, 0.4) == 2048
    assert _adjust(1024, 0.01) == 2048
    assert _adjust(128, 0.9) == 128
    assert _adjust(4096, 0.01) == 4096
    assert _adjust(2048, 0.1) == 2048


def test_epoch_adjusts_after_misses():
    l2 = L2Cache(SMALL_L2, PrefetchConfig(enabled=True, epoch_misses=4))
    l2.monitor.evict_counter, l2.monitor.unused_counter = 10, 9
    for _ in range(4):
        l2.note_miss()
    assert l2.monitor.granularity == 2048 and l2.monitor.history == [(0.9, 2048)]


@given(st.integers(0, 1 << 30), st.sampled_from([128, 256, 512, 1024, 2048, 3072, 4096]))
def test_prefetch_window_stays_in_page(line, gran):
    l2 = L2Cache(SMALL_L2)
    l2.monitor.granularity = gran
    start, n = l2.fetch_window(line, True)
    page = line // 32
    assert start <= line < start + n
    assert start // 32 == page and (start + n - 1) // 32 == page
    assert n <= gran // 128


# ------------------------------------------------------------------ pinning
def test_pin_unpin_without_writes():
    l2 = L2Cache(SMALL_L2)
    l2.pin_region()
    assert l2.unpin_region() == []


def test_pin_writes_unpin_returns_dirty_lines():
    l2 = L2Cache(SMALL_L2)
    l2.pin_region()
    for line in range(10):
        l2.write_pinned(line, line + 1, 0)
    l2.write_pinned(3, 99, 0)
    out = l2.unpin_region()
    assert sorted(e.line for e in out) == list(range(10))
    assert {e.line: e.version for e in out}[3] == 99
    assert l2.pinned_occupancy() == 0


def test_pinning_weakly_raises_read_miss_rate():
    rng = random.Random(1)
    lines = [rng.randrange(600) for _ in range(5000)]
    misses = []
    for pinned in (False, True):
        l2 = L2Cache(SMALL_L2)
        if pinned:
            l2.pin_region()
        n = 0
        for ln in lines:
            if not l2.lookup(ln, 0, 0x400, 0, ln // 32, 0).hit:
                n += 1
                l2.fill(ln, 0, 0)
        misses.append(n)
    assert misses[0] <= misses[1]
