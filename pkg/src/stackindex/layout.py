"""On-disk index layout and raw key ingestion.

File layout, all integers little-endian::

    header       64 bytes   magic "AIRX", version u16, flags u16, L u32,
                            key_bytes u32, value_bytes u32, record_count u64, zero pad
    directory    40 bytes   per layer, root first: type_tag u32, cell_size u32,
                            precision u64, cell_count u64, byte_offset u64, byte_length u64
    layers                  root first, contiguous, cells packed back to back
    data                    record_count x (key u64, value u64)

Fetch bounds are not stored; they are derived from (type, precision, child
unit size, child extent) when the file is opened.
"""

from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from stackindex.errors import (
    BadMagic,
    CorruptDirectory,
    DuplicateKey,
    InvalidPlan,
    LengthMismatch,
    UnsortedInput,
    UnsupportedVersion,
)
from stackindex.regressor import (
    CELL_DTYPES,
    CELL_SIZES,
    RegressorLayer,
    fetch_bound_for,
)

MAGIC = b"AIRX"
VERSION = 1
HEADER_SIZE = 64
DIR_ENTRY_SIZE = 40
KEY_BYTES = 8
VALUE_BYTES = 8

_HEADER = struct.Struct("<4sHHIIIQ")
_DIR_ENTRY = struct.Struct("<IIQQQQ")

RECORD_DTYPE = np.dtype([("key", "<u8"), ("value", "<u8")])
RECORD_SIZE = RECORD_DTYPE.itemsize


def as_records(records) -> np.ndarray:
    """Coerce a sequence of (key, value) pairs into a record array."""
    if isinstance(records, np.ndarray) and records.dtype == RECORD_DTYPE:
        return records
    arr = np.array([tuple(int(x) for x in r) for r in records], dtype=RECORD_DTYPE)
    return arr.reshape(-1)


def make_records(keys, values=None) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.uint64)
    out = np.empty(len(keys), dtype=RECORD_DTYPE)
    out["key"] = keys
    out["value"] = np.arange(len(keys), dtype=np.uint64) if values is None else values
    return out


@dataclass(frozen=True)
class LayerInfo:
    regressor_type: int
    precision: int
    cell_size: int
    cell_count: int
    byte_offset: int
    byte_length: int
    child_unit_size: int
    child_total_bytes: int
    fetch_bound: int


@dataclass
class IndexHandle:
    version: int
    record_count: int
    layers: list
    data_offset: int
    data_length: int
    store: object = field(repr=False)
    record_size: int = RECORD_SIZE

    @property
    def L(self) -> int:
        return len(self.layers)

    @property
    def root_bytes(self) -> int:
        return self.layers[0].byte_length if self.layers else self.data_length

    @property
    def fetch_bounds(self) -> list:
        return [layer.fetch_bound for layer in self.layers]

    @property
    def index_bytes(self) -> int:
        return sum(layer.byte_length for layer in self.layers)


def _check_plan(plan, data_bytes: int) -> None:
    layers = plan.layers
    if len(layers) != len(plan.fetch_bounds) or len(layers) != len(plan.configs):
        raise InvalidPlan("plan has mismatched layer, config and bound lists")
    child_unit, child_total = RECORD_SIZE, data_bytes
    for depth in range(len(layers) - 1, -1, -1):
        layer = layers[depth]
        if layer.child_unit_size != child_unit or layer.child_total_bytes != child_total:
            raise InvalidPlan(f"layer {depth} was not fitted over the layer below it")
        if plan.fetch_bounds[depth] != layer.fetch_bound:
            raise InvalidPlan(f"layer {depth} fetch bound disagrees with its fit")
        child_unit, child_total = layer.cell_size, layer.byte_length
    root = layers[0].byte_length if layers else data_bytes
    if plan.root_bytes != root:
        raise InvalidPlan("plan root size disagrees with its root layer")


def serialize(plan, records, out) -> int:
    """Write the index file to ``out`` (a binary file object or a path)."""
    records = as_records(records)
    if len(records) > 1:
        keys = records["key"]
        if not np.all(keys[1:] > keys[:-1]):
            raise InvalidPlan("records must be sorted by key with distinct keys")
    data_bytes = len(records) * RECORD_SIZE
    _check_plan(plan, data_bytes)

    L = len(plan.layers)
    parts = [_HEADER.pack(MAGIC, VERSION, 0, L, KEY_BYTES, VALUE_BYTES, len(records)).ljust(HEADER_SIZE, b"\0")]
    offset = HEADER_SIZE + DIR_ENTRY_SIZE * L
    for layer in plan.layers:
        parts.append(
            _DIR_ENTRY.pack(
                layer.regressor_type,
                layer.cell_size,
                layer.precision,
                layer.cell_count,
                offset,
                layer.byte_length,
            )
        )
        offset += layer.byte_length
    parts.extend(layer.to_bytes() for layer in plan.layers)
    parts.append(records.tobytes())

    if isinstance(out, (str, os.PathLike)):
        with open(out, "wb") as f:
            return _write_all(f, parts)
    return _write_all(out, parts)


def _write_all(f, parts) -> int:
    written = 0
    for part in parts:
        f.write(part)
        written += len(part)
    return written


def serialize_bytes(plan, records) -> bytes:
    buf = io.BytesIO()
    serialize(plan, records, buf)
    return buf.getvalue()


def open_index(store) -> IndexHandle:
    """Read header and directory only; layers and data stay on the store."""
    if store.total_len < HEADER_SIZE:
        raise BadMagic("file too short for an index header")
    header = store.read(0, HEADER_SIZE)
    magic, version, flags, L, key_bytes, value_bytes, count = _HEADER.unpack_from(header)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersion(f"unsupported index version {version}")
    if flags != 0 or key_bytes != KEY_BYTES or value_bytes != VALUE_BYTES:
        raise CorruptDirectory("unsupported flags or key/value widths")
    dir_len = DIR_ENTRY_SIZE * L
    if HEADER_SIZE + dir_len > store.total_len:
        raise CorruptDirectory(f"directory for {L} layers runs past end of file")
    raw = store.read(HEADER_SIZE, dir_len) if L else b""

    entries = [_DIR_ENTRY.unpack_from(raw, i * DIR_ENTRY_SIZE) for i in range(L)]
    expected = HEADER_SIZE + dir_len
    for depth, (tag, cell_size, precision, cell_count, byte_offset, byte_length) in enumerate(entries):
        if tag not in CELL_SIZES or CELL_SIZES[tag] != cell_size:
            raise CorruptDirectory(f"layer {depth}: bad type tag {tag} / cell size {cell_size}")
        if precision < 1 or cell_count < 1 or byte_length != cell_count * cell_size:
            raise CorruptDirectory(f"layer {depth}: inconsistent precision or extent")
        if byte_offset != expected:
            raise CorruptDirectory(f"layer {depth}: extent at {byte_offset}, expected {expected}")
        expected += byte_length
    data_offset = expected
    data_length = count * RECORD_SIZE
    if data_offset + data_length != store.total_len:
        raise CorruptDirectory(
            f"data layer of {data_length} bytes at {data_offset} does not end the "
            f"{store.total_len}-byte file"
        )

    layers = []
    child_unit, child_total = RECORD_SIZE, data_length
    for tag, cell_size, precision, cell_count, byte_offset, byte_length in reversed(entries):
        layers.append(
            LayerInfo(
                regressor_type=tag,
                precision=precision,
                cell_size=cell_size,
                cell_count=cell_count,
                byte_offset=byte_offset,
                byte_length=byte_length,
                child_unit_size=child_unit,
                child_total_bytes=child_total,
                fetch_bound=fetch_bound_for(tag, precision, child_unit, child_total),
            )
        )
        child_unit, child_total = cell_size, byte_length
    layers.reverse()
    return IndexHandle(
        version=version,
        record_count=count,
        layers=layers,
        data_offset=data_offset,
        data_length=data_length,
        store=store,
    )


def read_index(store):
    """Fully deserialize: returns (handle, layers root first, record array)."""
    handle = open_index(store)
    layers = []
    for info in handle.layers:
        raw = store.read(info.byte_offset, info.byte_length)
        cells = np.frombuffer(raw, dtype=CELL_DTYPES[info.regressor_type]).copy()
        layers.append(
            RegressorLayer(
                info.regressor_type,
                info.precision,
                cells,
                info.child_unit_size,
                info.child_total_bytes,
            )
        )
    if handle.data_length:
        raw = store.read(handle.data_offset, handle.data_length)
        records = np.frombuffer(raw, dtype=RECORD_DTYPE).copy()
    else:
        records = np.empty(0, dtype=RECORD_DTYPE)
    return handle, layers, records


def _read_u64(path, header: bool) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    if header:
        if len(raw) < 8:
            raise LengthMismatch(f"{path}: missing count header")
        (n,) = struct.unpack_from("<Q", raw)
        raw = raw[8:]
        if len(raw) != 8 * n:
            raise LengthMismatch(f"{path}: header says {n} keys, found {len(raw) / 8:g}")
    if len(raw) % 8:
        raise LengthMismatch(f"{path}: size {len(raw)} is not a multiple of 8 bytes")
    return np.frombuffer(raw, dtype="<u8").astype(np.uint64)


def ingest_keys(path, value_mode: str = "sequence", values_path=None, *, header: bool = False) -> np.ndarray:
    """Load sorted little-endian u64 keys into a record array.

    ``value_mode="sequence"`` assigns each key its ordinal position;
    ``value_mode="file"`` reads parallel u64 values from ``values_path``.
    ``header=True`` accepts SOSD files, which start with a u64 key count.
    """
    keys = _read_u64(path, header)
    if len(keys) > 1:
        diff_ok = keys[1:] > keys[:-1]
        if not diff_ok.all():
            pos = int(np.flatnonzero(~diff_ok)[0]) + 1
            if keys[pos] == keys[pos - 1]:
                raise DuplicateKey(int(keys[pos]))
            raise UnsortedInput(pos)
    if value_mode == "sequence":
        return make_records(keys)
    if value_mode == "file":
        if values_path is None:
            raise ValueError("value_mode 'file' needs values_path")
        values = _read_u64(values_path, False)
        if len(values) != len(keys):
            raise LengthMismatch(f"{len(values)} values for {len(keys)} keys")
        return make_records(keys, values)
    raise ValueError(f"unknown value mode {value_mode!r}")


def write_keys(path, keys, *, header: bool = False) -> None:
    keys = np.asarray(keys, dtype="<u8")
    with open(path, "wb") as f:
        if header:
            f.write(struct.pack("<Q", len(keys)))
        f.write(keys.tobytes())


def synthetic_keys(n: int, seed: int = 42) -> np.ndarray:
    """``n`` distinct uniform-random u64 keys, sorted."""
    rng = np.random.default_rng(seed)
    keys = np.unique(rng.integers(0, 2**64, size=n, dtype=np.uint64))
    while len(keys) < n:
        extra = rng.integers(0, 2**64, size=n - len(keys), dtype=np.uint64)
        keys = np.unique(np.concatenate([keys, extra]))
    return keys
