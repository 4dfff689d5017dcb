"""Point lookups and range scans against a persisted index.

A lookup reads the whole root layer, picks the cell governing the key, reads
the byte range that cell predicts in the next layer, and repeats until it
holds a window of data records. Nothing is cached between calls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from stackindex.errors import CorruptIndex, InvalidRange, KeyNotFound
from stackindex.layout import RECORD_DTYPE, RECORD_SIZE, IndexHandle, open_index
from stackindex.optimizer import plan_cost
from stackindex.regressor import locate_cell, predict_range
from stackindex.storage import StorageProfile, transfer_cost

__all__ = [
    "FetchTrace",
    "IndexHandle",
    "Record",
    "flat_lookup",
    "lookup",
    "lookup_modeled_cost",
    "open_index",
    "range_scan",
]


class Record(NamedTuple):
    key: int
    value: int


class Fetch(NamedTuple):
    layer_index: int
    offset: int
    length: int
    modeled_cost_s: float


@dataclass
class FetchTrace:
    reads: list = field(default_factory=list)

    @property
    def total_modeled_s(self) -> float:
        return math.fsum(r.modeled_cost_s for r in self.reads)

    def __len__(self) -> int:
        return len(self.reads)


class _Reader:
    def __init__(self, handle: IndexHandle, profile: Optional[StorageProfile]):
        self.store = handle.store
        self.profile = profile if profile is not None else getattr(handle.store, "profile", None)
        self.trace = FetchTrace()

    def fetch(self, layer_index: int, offset: int, length: int) -> bytes:
        data = self.store.read(offset, length)
        cost = transfer_cost(self.profile, length) if self.profile is not None else 0.0
        self.trace.reads.append(Fetch(layer_index, offset, length, cost))
        return data


def _descend(handle: IndexHandle, key: int, reader: _Reader):
    """Walk from the root to the data layer; returns (window bytes, first record index)."""
    if handle.record_count == 0:
        raise KeyNotFound(key)
    layers = handle.layers
    if not layers:
        return reader.fetch(0, handle.data_offset, handle.data_length), 0
    root = layers[0]
    window = reader.fetch(0, root.byte_offset, root.byte_length)
    rel = 0
    for depth, info in enumerate(layers):
        cell = locate_cell(window, rel, info.regressor_type, info.cell_size, key)
        start, length = predict_range(info, cell, key)
        if length <= 0 or start < 0 or start + length > info.child_total_bytes:
            raise CorruptIndex(f"layer {depth} predicted range ({start}, {length}) outside child")
        if depth + 1 < len(layers):
            child_offset = layers[depth + 1].byte_offset
        else:
            child_offset = handle.data_offset
        window = reader.fetch(depth + 1, child_offset + start, length)
        rel = start
    if rel % RECORD_SIZE:
        raise CorruptIndex(f"data window at {rel} is not record aligned")
    return window, rel // RECORD_SIZE


def _records(window: bytes) -> np.ndarray:
    if len(window) % RECORD_SIZE:
        raise CorruptIndex("data window is not whole records")
    recs = np.frombuffer(window, dtype=RECORD_DTYPE)
    keys = recs["key"]
    if len(keys) > 1 and not np.all(keys[1:] > keys[:-1]):
        raise CorruptIndex("data records are not sorted")
    return recs


def lookup(handle: IndexHandle, key: int, profile: Optional[StorageProfile] = None):
    """Return ``(value, trace)`` for an exact key.

    Modeled costs in the trace use ``profile`` or, failing that, the store's
    own profile when it has one; otherwise they are zero.
    """
    reader = _Reader(handle, profile)
    window, _ = _descend(handle, key, reader)
    recs = _records(window)
    i = int(np.searchsorted(recs["key"], np.uint64(key)))
    if i == len(recs) or int(recs["key"][i]) != key:
        raise KeyNotFound(key)
    return int(recs["value"][i]), reader.trace


def range_scan(handle: IndexHandle, begin: int, end: int, profile: Optional[StorageProfile] = None):
    """All records with begin <= key <= end, in key order."""
    if begin > end:
        raise InvalidRange(f"begin {begin} > end {end}")
    if handle.record_count == 0:
        return []
    reader = _Reader(handle, profile)
    window, first = _descend(handle, begin, reader)
    recs = _records(window)
    pos = int(np.searchsorted(recs["key"], np.uint64(begin)))
    out = []
    next_index = first + len(recs)
    chunk = handle.layers[-1].fetch_bound if handle.layers else handle.data_length
    while True:
        part = recs[pos:]
        keys = part["key"]
        stop = int(np.searchsorted(keys, np.uint64(end), side="right"))
        out.extend(Record(int(k), int(v)) for k, v in part[:stop])
        if stop < len(part) or next_index >= handle.record_count:
            return out
        offset = next_index * RECORD_SIZE
        length = min(chunk, handle.data_length - offset)
        recs = _records(reader.fetch(handle.L, handle.data_offset + offset, length))
        next_index += len(recs)
        pos = 0


def lookup_modeled_cost(handle: IndexHandle, profile: StorageProfile) -> float:
    """Modeled cost of the stored structure; an upper bound on any lookup's trace."""
    return plan_cost(profile, handle.root_bytes, handle.fetch_bounds)


def flat_lookup(handle: IndexHandle, key: int, profile: Optional[StorageProfile] = None):
    """Indexless baseline: binary search over the data layer, one record read per probe."""
    reader = _Reader(handle, profile)
    lo, hi = 0, handle.record_count
    while lo < hi:
        mid = (lo + hi) // 2
        raw = reader.fetch(handle.L, handle.data_offset + mid * RECORD_SIZE, RECORD_SIZE)
        rec = np.frombuffer(raw, dtype=RECORD_DTYPE)[0]
        k = int(rec["key"])
        if k == key:
            return int(rec["value"]), reader.trace
        if k < key:
            lo = mid + 1
        else:
            hi = mid
    raise KeyNotFound(key)
