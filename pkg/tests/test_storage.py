import math
import threading

import pytest
from hypothesis import given
from hypothesis import strategies as st

from stackindex.errors import InvalidProfile, OutOfBounds, ParseError
from stackindex.storage import (
    FileStore,
    MemoryStore,
    SimulatedStore,
    StorageProfile,
    load_profile,
    parse_profile,
    read_range,
    transfer_cost,
)

profiles = st.builds(
    StorageProfile,
    st.floats(min_value=0.0, max_value=10.0),
    st.floats(min_value=1.0, max_value=1e12),
)
sizes = st.integers(min_value=0, max_value=10**10)


def test_transfer_cost_short_rtt_page():
    assert transfer_cost(StorageProfile(0.005, 1e8), 4000) == pytest.approx(0.00504, rel=1e-12)


def test_transfer_cost_wide_node_on_long_rtt():
    assert transfer_cost(StorageProfile(0.1, 1e8), 500_000) == pytest.approx(0.105, rel=1e-12)


@pytest.mark.parametrize("latency", [0.0, 1e-6, 0.3, 7.0])
def test_zero_bytes_costs_one_round_trip(latency):
    assert transfer_cost(StorageProfile(latency, 123.0), 0) == latency


def test_negative_size_rejected():
    with pytest.raises(ValueError):
        transfer_cost(StorageProfile(0, 1), -1)


@pytest.mark.parametrize("lat,bw", [(-1, 1), (0, 0), (0, -5), (float("nan"), 1), (0, float("inf"))])
def test_profile_invariants(lat, bw):
    with pytest.raises(InvalidProfile):
        StorageProfile(lat, bw)


@given(profiles, sizes, sizes)
def test_cost_monotone_in_size(p, a, b):
    lo, hi = sorted((a, b))
    assert transfer_cost(p, lo) <= transfer_cost(p, hi)


@given(profiles, sizes, sizes)
def test_two_trips_never_beat_one(p, a, b):
    split = transfer_cost(p, a) + transfer_cost(p, b)
    whole = transfer_cost(p, a + b)
    # exact in real arithmetic; allow rounding of the three float sums
    assert split >= whole - 4 * math.ulp(whole)
    if p.latency_s > 1e-6 * whole:
        assert split > whole


def test_memory_store_slice():
    assert read_range(MemoryStore(bytes([1, 2, 3])), 1, 2) == bytes([2, 3])


@pytest.mark.parametrize("offset,length", [(2, 2), (-1, 1), (0, 0), (3, 1)])
def test_out_of_bounds(offset, length):
    with pytest.raises(OutOfBounds):
        MemoryStore(b"abc").read(offset, length)


def test_file_store_matches_memory(tmp_path):
    data = bytes(range(256)) * 40
    path = tmp_path / "blob"
    path.write_bytes(data)
    with FileStore(path) as fs:
        mem = MemoryStore(data)
        assert fs.total_len == len(data)
        for off, n in [(0, 1), (17, 300), (len(data) - 5, 5)]:
            assert fs.read(off, n) == mem.read(off, n)
            assert fs.read(off, n) == fs.read(off, n)
        with pytest.raises(OutOfBounds):
            fs.read(len(data) - 1, 2)


def test_simulated_store_accounting():
    sim = SimulatedStore(MemoryStore(b"xy"), StorageProfile(1.0, 1.0))
    sim.read(0, 1)
    sim.read(0, 1)
    assert sim.accrued_s == 4.0
    assert sim.read_log == [(0, 1), (0, 1)]


@given(st.lists(st.tuples(st.integers(0, 99), st.integers(1, 100)), max_size=50), profiles)
def test_simulated_accrual_replays_exactly(reads, profile):
    sim = SimulatedStore(MemoryStore(bytes(200)), profile)
    for off, n in reads:
        sim.read(off, n)
    assert len(sim.read_log) == len(reads)
    assert sim.accrued_s == sim.replay_cost()


def test_simulated_store_concurrent_reads():
    sim = SimulatedStore(MemoryStore(bytes(4096)), StorageProfile(1e-3, 1e6))

    def worker(seed):
        for i in range(200):
            sim.read((seed * 7 + i) % 4000, 1 + (i % 90))

    threads = [threading.Thread(target=worker, args=(s,)) for s in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(sim.read_log) == 1600
    assert sim.accrued_s == sim.replay_cost()


def test_load_profile(tmp_path):
    path = tmp_path / "p.json"
    path.write_text('{"latency_s": 0.005, "bandwidth_bps": 1e8}', encoding="utf-8")
    assert load_profile(path) == StorageProfile(0.005, 1e8)


def test_load_profile_sweep_device():
    p = parse_profile('{"latency_s": 1e-6, "bandwidth_bps": 134e6}')
    assert p.latency_s == 1e-6 and p.bandwidth_bps == 134e6


def test_profile_invalid_values():
    with pytest.raises(InvalidProfile):
        parse_profile('{"latency_s": -1, "bandwidth_bps": 1}')


@pytest.mark.parametrize(
    "text",
    [
        "not json",
        "[1, 2]",
        '{"latency_s": 1}',
        '{"latency_s": 1, "bandwidth_bps": 2, "extra": 3}',
    ],
)
def test_profile_parse_errors(text):
    with pytest.raises(ParseError):
        parse_profile(text)


def test_profile_rejects_non_numbers():
    with pytest.raises(InvalidProfile):
        parse_profile('{"latency_s": "fast", "bandwidth_bps": 1}')


def test_profile_json_roundtrip():
    p = StorageProfile(0.0123, 4.5e9)
    assert parse_profile(p.to_json()) == p
