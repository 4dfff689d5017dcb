"""Range-readable byte stores and the latency + size/bandwidth transfer model."""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Protocol

from stackindex.errors import InvalidProfile, OutOfBounds, ParseError

PROFILE_KEYS = ("latency_s", "bandwidth_bps")


@dataclass(frozen=True)
class StorageProfile:
    """Timing model of one storage device.

    latency_s is the fixed cost of a round trip, bandwidth_bps the streaming
    rate in bytes per second.
    """

    latency_s: float
    bandwidth_bps: float

    def __post_init__(self):
        lat, bw = self.latency_s, self.bandwidth_bps
        if isinstance(lat, bool) or not isinstance(lat, (int, float)):
            raise InvalidProfile(f"latency_s must be a number, got {lat!r}")
        if isinstance(bw, bool) or not isinstance(bw, (int, float)):
            raise InvalidProfile(f"bandwidth_bps must be a number, got {bw!r}")
        # NaN fails both comparisons
        if not lat >= 0:
            raise InvalidProfile(f"latency_s must be >= 0, got {lat}")
        if not bw > 0 or bw == float("inf"):
            raise InvalidProfile(f"bandwidth_bps must be positive and finite, got {bw}")
        object.__setattr__(self, "latency_s", float(lat))
        object.__setattr__(self, "bandwidth_bps", float(bw))

    def to_json(self) -> str:
        return json.dumps({"latency_s": self.latency_s, "bandwidth_bps": self.bandwidth_bps})


def transfer_cost(profile: StorageProfile, nbytes: int) -> float:
    """Seconds to fetch ``nbytes`` in one request."""
    if nbytes < 0:
        raise ValueError(f"nbytes must be >= 0, got {nbytes}")
    return profile.latency_s + nbytes / profile.bandwidth_bps


def parse_profile(text: str) -> StorageProfile:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"profile is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ParseError("profile must be a JSON object")
    unknown = sorted(set(obj) - set(PROFILE_KEYS))
    if unknown:
        raise ParseError(f"unknown profile keys: {', '.join(unknown)}")
    missing = [k for k in PROFILE_KEYS if k not in obj]
    if missing:
        raise ParseError(f"missing profile keys: {', '.join(missing)}")
    return StorageProfile(obj["latency_s"], obj["bandwidth_bps"])


def load_profile(path) -> StorageProfile:
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except UnicodeDecodeError as exc:
        raise ParseError(f"profile is not UTF-8: {exc}") from exc
    return parse_profile(text)


class RangeReader(Protocol):
    total_len: int

    def read(self, offset: int, length: int) -> bytes: ...


def _check_bounds(total_len: int, offset: int, length: int) -> None:
    if offset < 0 or length <= 0 or offset + length > total_len:
        raise OutOfBounds(
            f"read of {length} bytes at offset {offset} outside store of {total_len} bytes"
        )


class MemoryStore:
    """Read-only view over an in-memory buffer."""

    def __init__(self, data: bytes | bytearray | memoryview):
        self._data = bytes(data)
        self.total_len = len(self._data)

    def read(self, offset: int, length: int) -> bytes:
        _check_bounds(self.total_len, offset, length)
        return self._data[offset : offset + length]


class FileStore:
    """Positional reads against a local file.

    Uses ``os.pread`` so concurrent readers never share a file cursor.
    """

    def __init__(self, path):
        self.path = os.fspath(path)
        self._fd = os.open(self.path, os.O_RDONLY)
        self.total_len = os.fstat(self._fd).st_size

    def read(self, offset: int, length: int) -> bytes:
        _check_bounds(self.total_len, offset, length)
        out = bytearray()
        while len(out) < length:
            chunk = os.pread(self._fd, length - len(out), offset + len(out))
            if not chunk:
                raise OSError(f"short read from {self.path} at offset {offset + len(out)}")
            out += chunk
        return bytes(out)

    def close(self) -> None:
        if self._fd >= 0:
            os.close(self._fd)
            self._fd = -1

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass
class SimulatedStore:
    """Wraps a store and charges every read against a StorageProfile.

    With ``real_sleep`` set, each read also sleeps for its modeled duration.
    """

    inner: RangeReader
    profile: StorageProfile
    real_sleep: bool = False
    accrued_s: float = 0.0
    read_log: list = field(default_factory=list)

    def __post_init__(self):
        self._lock = threading.Lock()

    @property
    def total_len(self) -> int:
        return self.inner.total_len

    def read(self, offset: int, length: int) -> bytes:
        data = self.inner.read(offset, length)
        cost = transfer_cost(self.profile, length)
        with self._lock:
            self.read_log.append((offset, length))
            self.accrued_s += cost
        if self.real_sleep:
            time.sleep(cost)
        return data

    def reset(self) -> None:
        with self._lock:
            self.read_log.clear()
            self.accrued_s = 0.0

    def replay_cost(self) -> float:
        """Re-sum transfer costs over the read log in log order."""
        total = 0.0
        for _, length in self.read_log:
            total += transfer_cost(self.profile, length)
        return total


def read_range(store: RangeReader, offset: int, length: int) -> bytes:
    return store.read(offset, length)
