"""POSIX pax archive helpers shared by staging, sampling, and the client.

Archives are flat (no directory nesting) and uncompressed: the payload is
already-compressed images, so compression would spend CPU for nothing.
Entries are named ``<record_id>.png`` for image filetypes and
``<record_id>.json`` for metadata documents.
"""

from __future__ import annotations

import io
import tarfile
from pathlib import Path
from typing import BinaryIO, Iterable

from .catalog import ImageRecord

BLOCK = 512
RECORD_SIZE = 10240  # tarfile pads the archive end to this blocking size


class ExtractionError(Exception):
    """The archive is unreadable or contains entries we refuse to extract."""


def entry_name(record: ImageRecord) -> str:
    return record.record_id + record.filetype.extension


def write_archive(fileobj: BinaryIO, entries: Iterable[tuple[str, bytes]]) -> None:
    with tarfile.open(fileobj=fileobj, mode="w", format=tarfile.PAX_FORMAT) as tar:
        for name, data in entries:
            info = tarfile.TarInfo(name=name)
            info.size = len(data)
            info.mtime = 0
            info.mode = 0o644
            tar.addfile(info, io.BytesIO(data))


def write_archive_file(path: str | Path, entries: Iterable[tuple[str, bytes]]) -> int:
    """Write entries to ``path`` atomically; returns the archive size in bytes."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as fh:
            write_archive(fh, entries)
        tmp.replace(path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise
    return path.stat().st_size


def build_archive_bytes(entries: Iterable[tuple[str, bytes]]) -> bytes:
    buf = io.BytesIO()
    write_archive(buf, entries)
    return buf.getvalue()


def estimate_archive_size(byte_sizes: Iterable[int]) -> int:
    """Conservative upper bound on the pax archive size for the given payloads.

    Per entry: one ustar header block, up to two blocks of pax extended
    header, and the payload rounded up to a block. Must never under-estimate,
    since the staging disk budget reserves against it.
    """
    total = 0
    for size in byte_sizes:
        total += 3 * BLOCK + _round_up(size, BLOCK)
    total += 2 * BLOCK  # end-of-archive marker
    return _round_up(total, RECORD_SIZE)


def _round_up(value: int, multiple: int) -> int:
    return (value + multiple - 1) // multiple * multiple


def _safe_members(tar: tarfile.TarFile):
    for member in tar:
        if not member.isreg():
            raise ExtractionError(f"refusing non-regular archive member: {member.name!r}")
        name = member.name
        if "/" in name or "\\" in name or name in ("", ".", ".."):
            raise ExtractionError(f"refusing nested or unsafe member name: {name!r}")
        yield member


def extract_archive(tar_path: str | Path, dest_dir: str | Path) -> list[Path]:
    """Extract a flat archive into ``dest_dir``; returns the written paths."""
    dest = Path(dest_dir)
    dest.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    try:
        with tarfile.open(tar_path, mode="r:") as tar:
            for member in _safe_members(tar):
                source = tar.extractfile(member)
                if source is None:
                    raise ExtractionError(f"member has no data: {member.name!r}")
                target = dest / member.name
                with open(target, "wb") as out:
                    while chunk := source.read(1024 * 1024):
                        out.write(chunk)
                written.append(target)
    except tarfile.TarError as exc:
        raise ExtractionError(f"corrupt archive: {exc}") from exc
    return written


def iter_archive_entries(data: bytes):
    """(name, bytes) pairs from an in-memory archive; used by tests and tools."""
    try:
        with tarfile.open(fileobj=io.BytesIO(data), mode="r:") as tar:
            for member in _safe_members(tar):
                source = tar.extractfile(member)
                yield member.name, (source.read() if source else b"")
    except tarfile.TarError as exc:
        raise ExtractionError(f"corrupt archive: {exc}") from exc
