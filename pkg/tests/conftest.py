import numpy as np
import pytest

from stackindex import EntryTable, MemoryStore, open_index, search_optimal
from stackindex.layout import RECORD_SIZE, make_records, serialize_bytes, synthetic_keys
from stackindex.optimizer import SearchSpace, plan_from_chain, build_layer
from stackindex.storage import StorageProfile

SHORT_RTT = StorageProfile(0.005, 1e8)
LONG_RTT = StorageProfile(0.1, 1e8)
FAST_SSD = StorageProfile(1e-6, 134e6)


def values_for(keys):
    # distinct from the ordinal so lookups are not trivially position-valued
    return keys ^ np.uint64(0x9E3779B97F4A7C15)


def build_index(keys, profile=FAST_SSD, space=None, values=None):
    """Search, serialize and open an index over ``keys``; returns (handle, plan, records, blob)."""
    records = make_records(keys, values_for(keys) if values is None else values)
    table = EntryTable(records["key"], RECORD_SIZE)
    plan = search_optimal(table, profile, space or SearchSpace())
    blob = serialize_bytes(plan, records)
    return open_index(MemoryStore(blob)), plan, records, blob


def chain_index(keys, configs):
    """Index with a hand-chosen stack; ``configs`` listed from the data layer upward."""
    records = make_records(keys, values_for(keys))
    table = EntryTable(records["key"], RECORD_SIZE)
    chain, child = [], table
    for ctype, lam in configs:
        layer = build_layer(ctype, lam, child)
        chain.append(layer)
        child = layer.entries()
    plan = plan_from_chain(table, chain, FAST_SSD)
    blob = serialize_bytes(plan, records)
    return open_index(MemoryStore(blob)), plan, records, blob


@pytest.fixture(scope="session")
def keys100k():
    return synthetic_keys(100_000, seed=42)


@pytest.fixture(scope="session")
def index100k(keys100k):
    return build_index(keys100k)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
