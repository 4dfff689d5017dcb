import random
import threading

import numpy as np
import pytest

from stackindex.engine import flat_lookup, lookup, lookup_modeled_cost, range_scan
from stackindex.errors import CorruptIndex, InvalidRange, KeyNotFound
from stackindex.layout import IndexHandle, LayerInfo, make_records, open_index, serialize_bytes
from stackindex.optimizer import LayerPlan
from stackindex.regressor import LINEAR, STEP
from stackindex.storage import MemoryStore, SimulatedStore, StorageProfile, transfer_cost

from conftest import FAST_SSD, SHORT_RTT, build_index, chain_index, values_for

TINY = np.array([10, 20, 30], dtype=np.uint64)
TINY_VALUES = np.array([100, 200, 300], dtype=np.uint64)


def tiny_index(configs):
    _, plan, records, _ = chain_index(TINY, configs)
    records["value"] = TINY_VALUES
    return open_index(MemoryStore(serialize_bytes(plan, records)))


@pytest.mark.parametrize("configs", [[], [(STEP, 2)], [(STEP, 3)], [(LINEAR, 1)], [(STEP, 2), (STEP, 2)]])
def test_tiny_lookup(configs):
    h = tiny_index(configs)
    for k, v in zip(TINY.tolist(), TINY_VALUES.tolist()):
        value, trace = lookup(h, k)
        assert value == v
        assert len(trace) == h.L + 1
    _, t1 = lookup(h, 20, FAST_SSD)
    _, t2 = lookup(h, 20, FAST_SSD)
    assert [(r.offset, r.length) for r in t1.reads] == [(r.offset, r.length) for r in t2.reads]


@pytest.mark.parametrize("configs", [[], [(STEP, 2)], [(LINEAR, 1)]])
def test_tiny_absent_keys(configs):
    h = tiny_index(configs)
    for k in (0, 9, 15, 25, 31, 2**64 - 1):
        with pytest.raises(KeyNotFound):
            lookup(h, k)


def test_empty_index():
    recs = make_records([])
    plan = LayerPlan(layers=[], configs=[], modeled_cost_s=0.0, root_bytes=0, fetch_bounds=[])
    h = open_index(MemoryStore(serialize_bytes(plan, recs)))
    with pytest.raises(KeyNotFound):
        lookup(h, 1)
    assert range_scan(h, 0, 10) == []


def test_sampled_lookups_within_bounds(index100k):
    handle, plan, records, _ = index100k
    rng = np.random.default_rng(1)
    for i in rng.choice(len(records), 1000, replace=False):
        key = int(records["key"][i])
        value, trace = lookup(handle, key, FAST_SSD)
        assert value == int(records["value"][i])
        assert len(trace) == handle.L + 1
        assert trace.reads[0].length == handle.root_bytes
        for r in trace.reads[1:]:
            assert r.length <= handle.fetch_bounds[r.layer_index - 1]


def test_every_key_found_and_bounded(index100k):
    handle, _, records, _ = index100k
    bound = lookup_modeled_cost(handle, FAST_SSD)
    for k, v in records[::7].tolist():
        value, trace = lookup(handle, k, FAST_SSD)
        assert value == v
        assert trace.total_modeled_s <= bound


@pytest.mark.parametrize(
    "configs",
    [
        [(STEP, 4)],
        [(LINEAR, 16)],
        [(LINEAR, 2), (STEP, 3)],
        [(STEP, 16), (LINEAR, 8), (STEP, 2)],
        [(LINEAR, 100), (LINEAR, 1)],
    ],
)
def test_exhaustive_lookups_hand_built(configs):
    rng = np.random.default_rng(3)
    keys = np.unique(rng.integers(0, 2**64, 5000, dtype=np.uint64) >> np.uint64(rng.integers(0, 40)))
    handle, _, records, _ = chain_index(keys, configs)
    present = set(records["key"].tolist())
    for k, v in records.tolist():
        value, trace = lookup(handle, k)
        assert value == v and len(trace) == handle.L + 1
    for k in rng.integers(0, 2**64, 300, dtype=np.uint64).tolist():
        if k not in present:
            with pytest.raises(KeyNotFound):
                lookup(handle, k)


def test_range_scan_slice():
    keys = np.arange(1, 101, dtype=np.uint64)
    handle, *_ = chain_index(keys, [(STEP, 4), (STEP, 4)])
    got = range_scan(handle, 10, 13)
    assert [r.key for r in got] == [10, 11, 12, 13]
    assert [r.value for r in got] == values_for(np.arange(10, 14, dtype=np.uint64)).tolist()
    assert len(range_scan(handle, 0, 2**64 - 1)) == 100
    assert range_scan(handle, 101, 200) == []


def test_range_scan_point_equals_lookup(index100k):
    handle, _, records, _ = index100k
    for k in records["key"][[0, 17, 50_000, 99_999]].tolist():
        (rec,) = range_scan(handle, k, k)
        assert rec.value == lookup(handle, k)[0]


def test_range_scan_random(index100k):
    handle, _, records, _ = index100k
    keys = records["key"]
    rng = random.Random(9)
    for _ in range(100):
        if rng.random() < 0.5:
            i = rng.randrange(len(keys))
            j = min(len(keys) - 1, i + rng.randrange(0, 3000))
            lo, hi = int(keys[i]), int(keys[j])
        else:
            lo = rng.randrange(2**64)
            hi = min(2**64 - 1, lo + rng.randrange(2**50))
        mask = (keys >= np.uint64(lo)) & (keys <= np.uint64(hi))
        assert [tuple(r) for r in range_scan(handle, lo, hi)] == records[mask].tolist()


def test_range_scan_invalid(index100k):
    with pytest.raises(InvalidRange):
        range_scan(index100k[0], 5, 4)


def test_modeled_cost_no_layers():
    recs = make_records(np.arange(1000, dtype=np.uint64))
    plan = LayerPlan(layers=[], configs=[], modeled_cost_s=0.0, root_bytes=16_000, fetch_bounds=[])
    h = open_index(MemoryStore(serialize_bytes(plan, recs)))
    assert lookup_modeled_cost(h, SHORT_RTT) == transfer_cost(SHORT_RTT, 16_000)
    _, trace = lookup(h, 500, SHORT_RTT)
    assert trace.total_modeled_s == lookup_modeled_cost(h, SHORT_RTT)


def test_modeled_cost_tall_configuration():
    # three 4 KB step layers over 1M records: root of 4000 bytes, every fetch 4000 bytes
    layers = [
        LayerInfo(STEP, 250, 16, 250, 0, 4000, 16, 4000, 4000),
        LayerInfo(STEP, 250, 16, 250, 0, 4000, 16, 4000, 4000),
        LayerInfo(STEP, 250, 16, 250, 0, 4000, 16, 16_000_000, 4000),
    ]
    handle = IndexHandle(1, 1_000_000, layers, 0, 16_000_000, store=None)
    assert lookup_modeled_cost(handle, SHORT_RTT) == pytest.approx(0.02016, rel=1e-12)


def test_scaled_tall_trace():
    # every node 256 bytes; 6.4 MB/s makes each fetch cost what a 4 KB read does at 100 MB/s
    profile = StorageProfile(0.005, 6.4e6)
    handle, *_ = chain_index(np.arange(16**4, dtype=np.uint64) * 3, [(STEP, 16)] * 3)
    assert handle.root_bytes == 256 and handle.fetch_bounds == [256] * 3
    _, trace = lookup(handle, 3 * 40_000, profile)
    assert [r.length for r in trace.reads] == [256] * 4
    assert trace.total_modeled_s == pytest.approx(0.02016, rel=1e-12)
    assert lookup_modeled_cost(handle, profile) == pytest.approx(0.02016, rel=1e-12)


def test_simulated_store_accounting(index100k):
    _, plan, _, blob = index100k
    sim = SimulatedStore(MemoryStore(blob), FAST_SSD)
    handle = open_index(sim)
    sim.reset()
    keys = [int(k) for k in np.frombuffer(blob[-16 * 100_000 :], dtype="<u8")[::2][::997]]
    worst = 0.0
    for k in keys:
        before = sim.accrued_s
        _, trace = lookup(handle, k)
        assert trace.total_modeled_s == pytest.approx(sim.accrued_s - before, rel=1e-12)
        worst = max(worst, trace.total_modeled_s)
    assert worst <= lookup_modeled_cost(handle, FAST_SSD) == plan.modeled_cost_s


def test_no_writes_to_store(index100k):
    handle, _, records, blob = index100k

    touched = set()

    class ReadOnly(MemoryStore):
        def __getattr__(self, name):
            touched.add(name)
            raise AttributeError(name)

    store = ReadOnly(blob)
    h = open_index(store)
    lookup(h, int(records["key"][5]))
    range_scan(h, 0, int(records["key"][40]))
    flat_lookup(h, int(records["key"][9]))
    # only the optional profile probe falls through; nothing write-like is looked up
    assert touched <= {"profile"}
    assert store.read(0, len(blob)) == blob


def _corrupt(blob, offset, data):
    b = bytearray(blob)
    b[offset : offset + len(data)] = data
    return open_index(MemoryStore(bytes(b)))


def test_unsorted_root_anchors_detected():
    handle, plan, records, blob = chain_index(np.arange(1000, dtype=np.uint64) * 2, [(STEP, 10), (STEP, 10)])
    root = handle.layers[0]
    bad = _corrupt(blob, root.byte_offset, (2**63).to_bytes(8, "little"))
    with pytest.raises(CorruptIndex):
        lookup(bad, 500)


def test_unsorted_data_window_detected():
    handle, plan, records, blob = chain_index(np.arange(1000, dtype=np.uint64) * 2, [(STEP, 10)])
    bad = _corrupt(blob, handle.data_offset + 16 * 51, (0).to_bytes(8, "little"))
    with pytest.raises(CorruptIndex):
        lookup(bad, 104)


def test_misaligned_prediction_detected():
    handle, plan, records, blob = chain_index(np.arange(1000, dtype=np.uint64) * 2, [(STEP, 10), (STEP, 10)])
    low = handle.layers[1]
    # point the first low cell's start offset into the middle of a record
    bad = _corrupt(blob, low.byte_offset + 8, (8).to_bytes(8, "little"))
    with pytest.raises(CorruptIndex):
        lookup(bad, 2)


def test_flat_baseline(index100k):
    handle, _, records, _ = index100k
    for k, v in records[::9973].tolist():
        value, trace = flat_lookup(handle, k, FAST_SSD)
        assert value == v
        assert all(r.length == 16 for r in trace.reads)
        assert len(trace) <= 18
    absent = int(records["key"][0]) + 1
    assert absent != int(records["key"][1])
    with pytest.raises(KeyNotFound):
        flat_lookup(handle, absent)


def test_concurrent_lookups(index100k):
    handle, _, records, _ = index100k
    errors = []

    def worker(offset):
        try:
            for k, v in records[offset::50][:200].tolist():
                assert lookup(handle, k)[0] == v
        except Exception as exc:  # pragma: no cover
            errors.append(exc)

    threads = [threading.Thread(target=worker, args=(i,)) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors


def test_bigger_index_with_default_space():
    rng = np.random.default_rng(21)
    keys = np.unique(rng.integers(0, 2**40, 20_000, dtype=np.uint64))
    for profile in (FAST_SSD, StorageProfile(1e-3, 1e8)):
        handle, plan, records, _ = build_index(keys, profile)
        bound = lookup_modeled_cost(handle, profile)
        for k, v in records[::101].tolist():
            value, trace = lookup(handle, k, profile)
            assert value == v and trace.total_modeled_s <= bound
