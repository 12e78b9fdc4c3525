"""Local-directory blob store standing in for S3-compatible object storage.

Every ``get`` can charge a configurable per-object delay plus a bandwidth
term, which models the transfer-initialization overhead that makes batches
of many small objects slow. The charges queue through one shared gate, the
way real fetches share the single store-to-server link: concurrent staging
workers slow each other down instead of overlapping for free. Latency is
opt-in so correctness tests run fast.
"""

from __future__ import annotations

import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence


class ObjectStoreError(Exception):
    pass


class InvalidKey(ObjectStoreError):
    pass


class KeyExists(ObjectStoreError):
    pass


class BlobNotFound(ObjectStoreError):
    def __init__(self, key: str):
        super().__init__(f"no blob stored under key {key!r}")
        self.key = key


class FetchAborted(ObjectStoreError):
    """A batch fetch was abandoned via its abort callback."""


_KEY_CHARS = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789._-")


def validate_key(key: str) -> str:
    if not isinstance(key, str) or not key or len(key) > 512:
        raise InvalidKey("keys must be non-empty strings of at most 512 chars")
    if key.startswith("/") or key.endswith("/"):
        raise InvalidKey(f"key must not start or end with '/': {key!r}")
    for segment in key.split("/"):
        if segment in ("", ".", ".."):
            raise InvalidKey(f"key contains an illegal path segment: {key!r}")
        if not set(segment) <= _KEY_CHARS:
            raise InvalidKey(f"key contains illegal characters: {key!r}")
    return key


@dataclass(frozen=True)
class LatencyModel:
    """Injected per-fetch cost: fixed setup delay plus an optional bandwidth cap."""

    per_object_delay_ms: float = 0.0
    bandwidth_cap_bytes_per_sec: float = 0.0  # 0 = uncapped

    def __post_init__(self):
        if self.per_object_delay_ms < 0 or self.bandwidth_cap_bytes_per_sec < 0:
            raise ValueError("latency parameters must be >= 0")

    @property
    def enabled(self) -> bool:
        return self.per_object_delay_ms > 0 or self.bandwidth_cap_bytes_per_sec > 0

    def fetch_seconds(self, byte_size: int) -> float:
        seconds = self.per_object_delay_ms / 1000.0
        if self.bandwidth_cap_bytes_per_sec > 0:
            seconds += byte_size / self.bandwidth_cap_bytes_per_sec
        return seconds


class LocalDirectoryStore:
    """One file per key under a root directory; '/' in keys maps to subdirectories."""

    def __init__(self, root: str | Path, latency: LatencyModel | None = None):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.latency = latency or LatencyModel()
        self._link_gate = threading.Lock()
        self._link_free_at = 0.0

    def _path(self, key: str) -> Path:
        return self.root / validate_key(key)

    def _charge_transfer(self, byte_size: int) -> None:
        """Reserve a slot on the simulated store link and wait it out."""
        cost = self.latency.fetch_seconds(byte_size)
        if cost <= 0:
            return
        with self._link_gate:
            start = max(self._link_free_at, time.monotonic())
            finish = start + cost
            self._link_free_at = finish
        delay = finish - time.monotonic()
        if delay > 0:
            time.sleep(delay)

    def exists(self, key: str) -> bool:
        return self._path(key).is_file()

    def put(self, key: str, data: bytes) -> None:
        path = self._path(key)
        if path.exists():
            raise KeyExists(f"key already stored: {key!r}")
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(data)
        os.replace(tmp, path)

    def get(self, key: str) -> bytes:
        path = self._path(key)
        try:
            size = path.stat().st_size
        except FileNotFoundError:
            raise BlobNotFound(key) from None
        if self.latency.enabled:
            self._charge_transfer(size)
        return path.read_bytes()

    def get_many(
        self, keys: Sequence[str], abort: Callable[[], bool] | None = None
    ) -> list[bytes]:
        """Fetch blobs in request order; the per-object delay is charged once per key.

        Existence of every key is checked up front so a missing key fails the
        whole batch without partial latency charges.
        """
        for key in keys:
            if not self.exists(key):
                raise BlobNotFound(key)
        blobs = []
        for key in keys:
            if abort is not None and abort():
                raise FetchAborted(f"batch fetch aborted before {key!r}")
            blobs.append(self.get(key))
        return blobs

    def total_bytes(self) -> int:
        return sum(p.stat().st_size for p in self.root.rglob("*") if p.is_file())

    def iter_keys(self):
        for p in sorted(self.root.rglob("*")):
            if p.is_file():
                yield p.relative_to(self.root).as_posix()
