"""Regressor layers: fitting a layer over the one below and predicting fetch ranges.

Two regressor families are supported:

* ``STEP``: groups of ``precision`` consecutive entries per cell, like a B-tree
  node with a fixed fanout. Each cell stores its first key and the byte offset
  of its group.
* ``LINEAR``: error-bounded piecewise-linear segments. Each cell stores its
  first key, the byte offset of that key (intercept) and a slope; every entry
  it governs is predicted within ``precision`` bytes.

Offsets are always relative to the start of the child layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numba
import numpy as np

from stackindex.errors import CorruptLayer, DegenerateFit, FitVerificationFailed

STEP = 1
LINEAR = 2
TYPE_NAMES = {STEP: "step", LINEAR: "linear"}
TYPE_BY_NAME = {v: k for k, v in TYPE_NAMES.items()}

STEP_DTYPE = np.dtype([("anchor", "<u8"), ("start", "<u8")])
LINEAR_DTYPE = np.dtype([("anchor", "<u8"), ("intercept", "<f8"), ("slope", "<f8")])
CELL_DTYPES = {STEP: STEP_DTYPE, LINEAR: LINEAR_DTYPE}
CELL_SIZES = {STEP: STEP_DTYPE.itemsize, LINEAR: LINEAR_DTYPE.itemsize}

# Slack the cone keeps below the requested error so midpoint rounding never
# pushes a prediction past the bound that verification enforces.
_CONE_MARGIN = 0.25


@dataclass(frozen=True)
class StepCell:
    anchor_key: int
    start_offset: int


@dataclass(frozen=True)
class LinearCell:
    anchor_key: int
    intercept: float
    slope: float


RegressorCell = Union[StepCell, LinearCell]


class EntryTable:
    """Sorted addressable units of one layer: unit ``i`` starts at ``i * unit_size``."""

    __slots__ = ("keys", "unit_size")

    def __init__(self, keys, unit_size: int):
        keys = np.ascontiguousarray(keys, dtype=np.uint64)
        if unit_size <= 0:
            raise ValueError("unit_size must be positive")
        self.keys = keys
        self.unit_size = int(unit_size)

    def __len__(self) -> int:
        return len(self.keys)

    @property
    def count(self) -> int:
        return len(self.keys)

    @property
    def total_bytes(self) -> int:
        return len(self.keys) * self.unit_size

    @property
    def offsets(self) -> np.ndarray:
        return np.arange(len(self.keys), dtype=np.uint64) * np.uint64(self.unit_size)

    def entries(self):
        """(anchor_key, byte_offset) pairs as Python ints."""
        u = self.unit_size
        return [(int(k), i * u) for i, k in enumerate(self.keys)]


def step_fetch_bound(fanout: int, unit_size: int, child_total: int) -> int:
    return min(fanout * unit_size, child_total)


def linear_fetch_bound(error: int, unit_size: int, child_total: int) -> int:
    # Unit-aligned window around an error band of 2*error + unit bytes.
    units = -(-2 * error // unit_size) + 2
    return min(units * unit_size, child_total)


def fetch_bound_for(regressor_type: int, precision: int, unit_size: int, child_total: int) -> int:
    if regressor_type == STEP:
        return step_fetch_bound(precision, unit_size, child_total)
    if regressor_type == LINEAR:
        return linear_fetch_bound(precision, unit_size, child_total)
    raise ValueError(f"unknown regressor type {regressor_type}")


class RegressorLayer:
    """An immutable fitted layer. Cells are held column-wise in ``cells_array``."""

    def __init__(
        self,
        regressor_type: int,
        precision: int,
        cells_array: np.ndarray,
        child_unit_size: int,
        child_total_bytes: int,
    ):
        self.regressor_type = regressor_type
        self.precision = int(precision)
        self.cells_array = cells_array
        self.cell_size = CELL_SIZES[regressor_type]
        self.child_unit_size = int(child_unit_size)
        self.child_total_bytes = int(child_total_bytes)
        self.fetch_bound = fetch_bound_for(
            regressor_type, self.precision, self.child_unit_size, self.child_total_bytes
        )

    def __repr__(self) -> str:
        return (
            f"RegressorLayer({TYPE_NAMES[self.regressor_type]}, precision={self.precision}, "
            f"cells={self.cell_count}, fetch_bound={self.fetch_bound})"
        )

    @property
    def anchors(self) -> np.ndarray:
        return self.cells_array["anchor"]

    @property
    def cell_count(self) -> int:
        return len(self.cells_array)

    @property
    def byte_length(self) -> int:
        return self.cell_count * self.cell_size

    @property
    def config(self) -> tuple[int, int]:
        return (self.regressor_type, self.precision)

    def cell(self, i: int) -> RegressorCell:
        return _to_cell(self.regressor_type, self.cells_array[i])

    @property
    def cells(self) -> list:
        return [self.cell(i) for i in range(self.cell_count)]

    def governing_index(self, key: int) -> int:
        i = int(np.searchsorted(self.anchors, np.uint64(key), side="right")) - 1
        return max(i, 0)

    def governing_cell(self, key: int) -> RegressorCell:
        return self.cell(self.governing_index(key))

    def entries(self) -> EntryTable:
        """This layer seen as the addressable table for a layer above it."""
        return EntryTable(self.anchors, self.cell_size)

    def to_bytes(self) -> bytes:
        return self.cells_array.tobytes()


def _to_cell(regressor_type: int, row) -> RegressorCell:
    if regressor_type == STEP:
        return StepCell(int(row["anchor"]), int(row["start"]))
    return LinearCell(int(row["anchor"]), float(row["intercept"]), float(row["slope"]))


def fit_step(table: EntryTable, fanout_lambda: int) -> RegressorLayer:
    if fanout_lambda < 1:
        raise ValueError(f"fanout must be positive, got {fanout_lambda}")
    n = table.count
    count = -(-n // fanout_lambda)
    if count >= n:
        raise DegenerateFit(f"step fanout {fanout_lambda} over {n} entries does not shrink")
    cells = np.empty(count, dtype=STEP_DTYPE)
    cells["anchor"] = table.keys[::fanout_lambda]
    cells["start"] = np.arange(count, dtype=np.uint64) * np.uint64(fanout_lambda * table.unit_size)
    return RegressorLayer(STEP, fanout_lambda, cells, table.unit_size, table.total_bytes)


@numba.njit(cache=True, nogil=True)
def _cone_segments(keys, unit, err):
    """Greedy shrinking-cone segmentation.

    Every segment is anchored at its first entry. Besides the two-sided error
    constraint on each entry, the last entry of a segment also gets an upper
    constraint at ``next_key - 1`` so keys falling in the gap after the segment
    still receive a window that starts at or before that entry.
    """
    n = keys.shape[0]
    starts = np.empty(n, dtype=np.int64)
    slopes = np.empty(n, dtype=np.float64)
    m = 0
    i = 0
    while i < n:
        k0 = keys[i]
        o0 = i * unit
        lo = 0.0
        hi = np.inf
        close_hi = np.inf
        if i + 1 < n:
            dq = np.float64(keys[i + 1] - np.uint64(1) - k0)
            if dq > 0.0:
                close_hi = (unit + err) / dq
        j = i + 1
        while j < n:
            dk = np.float64(keys[j] - k0)
            rel = np.float64(j * unit - o0)
            nlo = max(lo, (rel - err) / dk)
            nhi = min(hi, (rel + err) / dk)
            if nlo > nhi:
                break
            gap_hi = nhi
            if j + 1 < n:
                dq = np.float64(keys[j + 1] - np.uint64(1) - k0)
                if dq > dk:
                    gap_hi = min(nhi, (rel + unit + err) / dq)
            if nlo > gap_hi:
                break
            lo = nlo
            hi = nhi
            close_hi = gap_hi
            j += 1
        starts[m] = i
        if close_hi == np.inf:
            slopes[m] = lo
        else:
            slopes[m] = 0.5 * (lo + close_hi)
        m += 1
        i = j
    return starts[:m], slopes[:m]


def fit_linear(table: EntryTable, error_lambda: int) -> RegressorLayer:
    if error_lambda < 1:
        raise ValueError(f"error bound must be >= 1 byte, got {error_lambda}")
    n = table.count
    if n == 0:
        raise DegenerateFit("cannot fit an empty table")
    u = table.unit_size
    err = float(error_lambda) - min(_CONE_MARGIN, error_lambda / 4.0)
    starts, slopes = _cone_segments(table.keys, u, err)
    count = len(starts)
    if count >= n:
        raise DegenerateFit(f"linear error {error_lambda} over {n} entries does not shrink")
    cells = np.empty(count, dtype=LINEAR_DTYPE)
    cells["anchor"] = table.keys[starts]
    cells["intercept"] = (starts * u).astype(np.float64)
    cells["slope"] = slopes
    layer = RegressorLayer(LINEAR, error_lambda, cells, u, table.total_bytes)
    _verify_linear(layer, table, starts)
    return layer


def _linear_windows(layer: RegressorLayer, cell_idx: np.ndarray, keys: np.ndarray):
    """Vectorised twin of ``predict_range`` for linear cells and keys >= anchor."""
    cells = layer.cells_array[cell_idx]
    u = float(layer.child_unit_size)
    lam = float(layer.precision)
    total = float(layer.child_total_bytes)
    d = (keys - cells["anchor"]).astype(np.float64)
    p = cells["intercept"] + cells["slope"] * d
    start = np.floor((p - lam) / u) * u
    end = np.ceil((p + lam + u) / u) * u
    start = np.minimum(np.maximum(start, 0.0), total - u)
    end = np.minimum(end, start + float(layer.fetch_bound))
    end = np.maximum(np.minimum(end, total), start + u)
    return p, start, end


def _verify_linear(layer: RegressorLayer, table: EntryTable, starts: np.ndarray) -> None:
    n = table.count
    u = table.unit_size
    gov = np.repeat(np.arange(len(starts)), np.diff(np.append(starts, n)))
    offsets = np.arange(n, dtype=np.float64) * u
    p, start, end = _linear_windows(layer, gov, table.keys)
    bad = np.abs(p - offsets) > layer.precision
    bad |= start > offsets
    bad |= end < offsets + u
    if n > 1:
        # largest key still governed by entry i is next_key - 1
        gap_keys = table.keys[1:] - np.uint64(1)
        _, gstart, gend = _linear_windows(layer, gov[:-1], gap_keys)
        bad[:-1] |= gstart > offsets[:-1]
        bad[:-1] |= gend < offsets[:-1] + u
    if bad.any():
        first = int(np.flatnonzero(bad)[0])
        raise FitVerificationFailed(
            f"linear layer misses entry {first} (key {int(table.keys[first])})"
        )


def predict_range(layer, cell: RegressorCell, key: int) -> tuple[int, int]:
    """Byte range ``(start, length)`` in the child layer that holds ``key``'s unit.

    ``layer`` may be a RegressorLayer or any object exposing ``regressor_type``,
    ``precision``, ``child_unit_size``, ``child_total_bytes`` and ``fetch_bound``.
    """
    u = layer.child_unit_size
    total = layer.child_total_bytes
    if layer.regressor_type == STEP:
        start = cell.start_offset
        return start, min(layer.precision * u, total - start)
    lam = layer.precision
    p = cell.intercept + cell.slope * float(key - cell.anchor_key)
    start = math.floor((p - lam) / u) * u
    end = math.ceil((p + lam + u) / u) * u
    start = min(max(start, 0), total - u)
    end = min(end, start + layer.fetch_bound)
    end = max(min(end, total), start + u)
    return start, end - start


def parse_cells(window: bytes, regressor_type: int, cell_size: int) -> np.ndarray:
    dtype = CELL_DTYPES.get(regressor_type)
    if dtype is None or dtype.itemsize != cell_size:
        raise CorruptLayer(f"bad cell layout: type {regressor_type}, size {cell_size}")
    if len(window) == 0 or len(window) % cell_size:
        raise CorruptLayer(f"window of {len(window)} bytes is not whole {cell_size}-byte cells")
    return np.frombuffer(window, dtype=dtype)


def locate_cell(
    window_bytes: bytes,
    window_start_offset: int,
    regressor_type: int,
    cell_size: int,
    key: int,
) -> RegressorCell:
    """Last cell in the window whose anchor is <= key, else the first cell."""
    if window_start_offset % cell_size:
        raise CorruptLayer(f"window offset {window_start_offset} not aligned to {cell_size}")
    cells = parse_cells(window_bytes, regressor_type, cell_size)
    anchors = cells["anchor"]
    if len(anchors) > 1 and not np.all(anchors[1:] > anchors[:-1]):
        raise CorruptLayer("cell anchors are not strictly increasing")
    i = int(np.searchsorted(anchors, np.uint64(key), side="right")) - 1
    return _to_cell(regressor_type, cells[max(i, 0)])
