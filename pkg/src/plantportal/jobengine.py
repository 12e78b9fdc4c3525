"""Download jobs: partitioning, double-buffered staging, and part serving.

A job's file list is split into ordered parts. One worker thread per job
stages parts strictly in index order, keeping at most two parts in flight
(Staging or Ready) and starting part i+2 only once part i's archive has been
deleted after a completed client transfer. Failed parts release their slot
exactly like deleted ones so a single bad blob cannot wedge the pipeline.

All state transitions go through one registry-wide condition variable and are
appended to a per-job event log, which the tests replay to check the pipeline
invariants.
"""

from __future__ import annotations

import json
import logging
import secrets
import shutil
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

from . import archive
from .catalog import ImageRecord
from .objectstore import FetchAborted, LocalDirectoryStore

log = logging.getLogger(__name__)

DEFAULT_TARGET_PART_BYTES = 64 * 1024 * 1024
DEFAULT_MAX_PART_FILES = 1000
DEFAULT_JOB_TTL_SECONDS = 24 * 3600.0
SERVE_CHUNK_BYTES = 256 * 1024


class JobEngineError(Exception):
    pass


class EmptyQueryResult(JobEngineError):
    pass


class TooManyLiveJobs(JobEngineError):
    pass


class UnknownJob(JobEngineError):
    pass


class UnknownPart(JobEngineError):
    pass


class PartNotReady(JobEngineError):
    pass


class PartGone(JobEngineError):
    """The archive was already consumed and deleted."""


class PartFailed(JobEngineError):
    pass


class DiskBudgetExceeded(JobEngineError):
    pass


class PartState(Enum):
    PENDING = "pending"
    STAGING = "staging"
    READY = "ready"
    SERVED = "served"
    DELETED = "deleted"
    FAILED = "failed"


# Pending -> Staging -> Ready -> Served -> Deleted, plus any -> Failed.
_LEGAL_TRANSITIONS = {
    PartState.PENDING: {PartState.STAGING, PartState.FAILED},
    PartState.STAGING: {PartState.READY, PartState.FAILED},
    PartState.READY: {PartState.SERVED, PartState.FAILED},
    PartState.SERVED: {PartState.DELETED, PartState.FAILED},
    PartState.DELETED: set(),
    PartState.FAILED: set(),
}

_IN_FLIGHT = (PartState.STAGING, PartState.READY)
_SLOT_RELEASED = (PartState.DELETED, PartState.FAILED)


class PartFile(NamedTuple):
    record_id: str
    blob_key: str
    byte_size: int
    name: str  # archive entry name


def part_file(record: ImageRecord) -> PartFile:
    return PartFile(record.record_id, record.blob_key, record.byte_size, archive.entry_name(record))


@dataclass(frozen=True)
class PartitionPolicy:
    target_part_bytes: int = DEFAULT_TARGET_PART_BYTES
    max_part_files: int = DEFAULT_MAX_PART_FILES

    def __post_init__(self):
        if self.target_part_bytes <= 0 or self.max_part_files <= 0:
            raise ValueError("partition limits must be positive")


@dataclass
class Part:
    index: int
    files: tuple[PartFile, ...]
    state: PartState = PartState.PENDING
    archive_path: Path | None = None
    archive_bytes: int = 0
    failure: str | None = None
    reserved_bytes: int = 0  # current claim against the staging budget


@dataclass(frozen=True)
class PartEvent:
    seq: int
    at: float  # monotonic seconds
    part_index: int
    state: PartState


@dataclass(eq=False)
class DownloadJob:
    job_id: str
    owner: str
    created_at: float
    parts: list[Part]
    events: list[PartEvent] = field(default_factory=list)
    cancelled: bool = False
    worker: threading.Thread | None = None

    @property
    def part_count(self) -> int:
        return len(self.parts)


def partition(files: Sequence[PartFile], policy: PartitionPolicy) -> list[Part]:
    """Greedy split preserving order: a part closes when either limit would be
    exceeded; a single file larger than the byte target gets its own part."""
    parts: list[Part] = []
    current: list[PartFile] = []
    current_bytes = 0
    for f in files:
        over_bytes = current_bytes + f.byte_size > policy.target_part_bytes
        over_files = len(current) + 1 > policy.max_part_files
        if current and (over_bytes or over_files):
            parts.append(Part(index=len(parts), files=tuple(current)))
            current, current_bytes = [], 0
        current.append(f)
        current_bytes += f.byte_size
    if current:
        parts.append(Part(index=len(parts), files=tuple(current)))
    return parts


def new_job_id() -> str:
    # 192 bits of entropy, URL-safe; doubles as the staging subdirectory name.
    return secrets.token_urlsafe(24)


class PartStream:
    """Streaming view of one Ready part's archive.

    The part is marked Served and its archive deleted only when the stream is
    read to the end; an interrupted transfer leaves the part Ready so the
    client can fetch it again.
    """

    def __init__(self, engine: "JobEngine", job: DownloadJob, part: Part, chunk_size: int):
        self._engine = engine
        self._job = job
        self._part = part
        self._path = part.archive_path
        self._chunk = chunk_size
        self.content_length = part.archive_bytes

    def __iter__(self) -> Iterator[bytes]:
        try:
            fh = open(self._path, "rb")
        except FileNotFoundError:
            # A concurrent stream completed first and the archive was deleted.
            raise PartGone(f"part {self._part.index} was already downloaded and deleted") from None
        with fh:
            while chunk := fh.read(self._chunk):
                yield chunk
        self._engine._complete_serve(self._job, self._part)

    def read_all(self) -> bytes:
        return b"".join(self)


class JobEngine:
    """Registry of download jobs plus their staging workers and disk budget."""

    def __init__(
        self,
        store: LocalDirectoryStore,
        staging_dir: str | Path,
        *,
        policy: PartitionPolicy | None = None,
        staging_budget_bytes: int = 4 * 1024 * 1024 * 1024,
        max_live_jobs: int = 16,
        job_ttl_seconds: float = DEFAULT_JOB_TTL_SECONDS,
        staging_timeout_seconds: float = 600.0,
    ):
        self._store = store
        self._staging_dir = Path(staging_dir)
        self._staging_dir.mkdir(parents=True, exist_ok=True)
        self.policy = policy or PartitionPolicy()
        self._budget = staging_budget_bytes
        self._max_live_jobs = max_live_jobs
        self._ttl = job_ttl_seconds
        # A part whose fetch outlives this deadline is failed so the job's
        # sequential worker cannot wedge behind one stuck blob.
        self._staging_timeout = staging_timeout_seconds
        self._cv = threading.Condition()
        self._jobs: dict[str, DownloadJob] = {}
        self._used_bytes = 0
        self._peak_used_bytes = 0
        self._event_seq = 0
        self._closed = False
        self._janitor_wakeup = threading.Event()
        self._janitor = threading.Thread(target=self._expire_loop, daemon=True, name="job-janitor")
        self._janitor.start()

    # --- job lifecycle ----------------------------------------------------

    def create_job(self, owner: str, files: Sequence[PartFile]) -> tuple[str, int]:
        """Register a job and start staging immediately; returns (job_id, part_count).

        Never blocks on staging work: the response contract is that job
        creation latency is independent of job size.
        """
        if not files:
            raise EmptyQueryResult("a job needs at least one file")
        parts = partition(files, self.policy)
        job = DownloadJob(job_id=new_job_id(), owner=owner, created_at=time.time(), parts=parts)
        with self._cv:
            if self._closed:
                raise JobEngineError("engine is shut down")
            if len(self._jobs) >= self._max_live_jobs:
                raise TooManyLiveJobs(f"live job cap of {self._max_live_jobs} reached")
            self._jobs[job.job_id] = job
        worker = threading.Thread(
            target=self._stage_job, args=(job,), daemon=True, name=f"staging-{job.job_id[:8]}"
        )
        job.worker = worker
        worker.start()
        return job.job_id, job.part_count

    def _lookup(self, job_id: str, index: int | None = None) -> tuple[DownloadJob, Part | None]:
        job = self._jobs.get(job_id)
        if job is None:
            raise UnknownJob(job_id)
        if index is None:
            return job, None
        if not 0 <= index < len(job.parts):
            raise UnknownPart(f"job {job_id} has no part {index}")
        return job, job.parts[index]

    def job_owner(self, job_id: str) -> str:
        with self._cv:
            job, _ = self._lookup(job_id)
            return job.owner

    def part_status(self, job_id: str, index: int) -> PartState:
        with self._cv:
            _, part = self._lookup(job_id, index)
            return part.state

    def job_events(self, job_id: str) -> list[PartEvent]:
        with self._cv:
            job, _ = self._lookup(job_id)
            return list(job.events)

    def serve_part(self, job_id: str, index: int, chunk_size: int = SERVE_CHUNK_BYTES) -> PartStream:
        with self._cv:
            job, part = self._lookup(job_id, index)
            if part.state in (PartState.PENDING, PartState.STAGING):
                raise PartNotReady(f"part {index} is {part.state.value}")
            if part.state in (PartState.SERVED, PartState.DELETED):
                raise PartGone(f"part {index} was already downloaded and deleted")
            if part.state is PartState.FAILED:
                raise PartFailed(part.failure or f"part {index} failed")
            return PartStream(self, job, part, chunk_size)

    def cleanup_job(self, job_id: str) -> None:
        """Delete archives and unregister; idempotent, also fired by the TTL janitor."""
        with self._cv:
            job = self._jobs.pop(job_id, None)
            if job is None:
                return
            job.cancelled = True
            for part in job.parts:
                self._release_budget(part)
            self._cv.notify_all()
        self._delete_job_dir(job)

    def live_jobs(self) -> int:
        with self._cv:
            return len(self._jobs)

    def staged_bytes(self) -> int:
        with self._cv:
            return self._used_bytes

    def peak_staged_bytes(self) -> int:
        with self._cv:
            return self._peak_used_bytes

    def close(self) -> None:
        with self._cv:
            self._closed = True
            jobs = list(self._jobs.values())
        self._janitor_wakeup.set()
        for job in jobs:
            self.cleanup_job(job.job_id)
        self._janitor.join(timeout=10)
        for job in jobs:
            if job.worker is not None:
                job.worker.join(timeout=30)

    def _expire_loop(self) -> None:
        interval = max(0.05, min(self._ttl / 4, 30.0))
        while not self._janitor_wakeup.wait(interval):
            cutoff = time.time() - self._ttl
            with self._cv:
                expired = [j.job_id for j in self._jobs.values() if j.created_at < cutoff]
            for job_id in expired:
                log.info("expiring job %s past its TTL", job_id)
                self.cleanup_job(job_id)

    # --- staging worker -----------------------------------------------------

    def _transition(self, job: DownloadJob, part: Part, state: PartState) -> None:
        # Caller holds the condition lock.
        if state not in _LEGAL_TRANSITIONS[part.state]:
            raise JobEngineError(
                f"illegal transition {part.state.value} -> {state.value} for part {part.index}"
            )
        part.state = state
        self._event_seq += 1
        job.events.append(PartEvent(self._event_seq, time.monotonic(), part.index, state))
        self._cv.notify_all()

    def _reserve_budget(self, part: Part, amount: int) -> None:
        part.reserved_bytes = amount
        self._used_bytes += amount
        self._peak_used_bytes = max(self._peak_used_bytes, self._used_bytes)

    def _adjust_budget(self, part: Part, actual: int) -> None:
        self._used_bytes += actual - part.reserved_bytes
        part.reserved_bytes = actual
        self._peak_used_bytes = max(self._peak_used_bytes, self._used_bytes)

    def _release_budget(self, part: Part) -> None:
        self._used_bytes -= part.reserved_bytes
        part.reserved_bytes = 0

    def _may_stage(self, job: DownloadJob, part: Part, estimate: int) -> bool:
        if sum(1 for p in job.parts if p.state in _IN_FLIGHT) >= 2:
            return False
        if part.index >= 2 and job.parts[part.index - 2].state not in _SLOT_RELEASED:
            return False
        return self._used_bytes + estimate <= self._budget

    def _stage_job(self, job: DownloadJob) -> None:
        job_dir = self._staging_dir / job.job_id
        for part in job.parts:
            estimate = archive.estimate_archive_size(f.byte_size for f in part.files)
            with self._cv:
                if estimate > self._budget:
                    part.failure = f"disk budget exceeded: part needs ~{estimate} bytes"
                    self._transition(job, part, PartState.FAILED)
                    continue
                self._cv.wait_for(lambda: job.cancelled or self._may_stage(job, part, estimate))
                if job.cancelled:
                    break
                self._reserve_budget(part, estimate)
                self._transition(job, part, PartState.STAGING)
            deadline = time.monotonic() + self._staging_timeout
            try:
                blobs = self._store.get_many(
                    [f.blob_key for f in part.files],
                    abort=lambda: job.cancelled or time.monotonic() > deadline,
                )
                job_dir.mkdir(parents=True, exist_ok=True)
                path = job_dir / f"part-{part.index:05d}.tar"
                size = archive.write_archive_file(
                    path, zip((f.name for f in part.files), blobs)
                )
                with self._cv:
                    if job.cancelled:
                        # Cleanup already released this part's reservation.
                        path.unlink(missing_ok=True)
                        break
                    part.archive_path = path
                    part.archive_bytes = size
                    self._adjust_budget(part, size)
                    self._transition(job, part, PartState.READY)
            except FetchAborted:
                if job.cancelled:
                    with self._cv:
                        self._release_budget(part)
                    break
                log.warning("staging of job %s part %d timed out", job.job_id, part.index)
                with self._cv:
                    self._release_budget(part)
                    part.failure = f"staging timed out after {self._staging_timeout:.0f}s"
                    self._transition(job, part, PartState.FAILED)
            except Exception as exc:
                log.warning("staging of job %s part %d failed: %s", job.job_id, part.index, exc)
                with self._cv:
                    self._release_budget(part)
                    part.failure = str(exc)
                    self._transition(job, part, PartState.FAILED)
        if job.cancelled:
            self._delete_job_dir(job)

    def _complete_serve(self, job: DownloadJob, part: Part) -> None:
        """Called by PartStream after the final byte was handed to the transport."""
        with self._cv:
            if part.state is not PartState.READY:
                return  # a concurrent stream already completed this part
            self._transition(job, part, PartState.SERVED)
            if part.archive_path is not None:
                part.archive_path.unlink(missing_ok=True)
            self._release_budget(part)
            self._transition(job, part, PartState.DELETED)
            part.archive_path = None

    def _delete_job_dir(self, job: DownloadJob) -> None:
        shutil.rmtree(self._staging_dir / job.job_id, ignore_errors=True)


# --- precompiled datasets ----------------------------------------------------


class UnknownDataset(JobEngineError):
    pass


@dataclass(frozen=True)
class PrecompiledDataset:
    dataset_id: str
    name: str
    archive_path: Path
    file_count: int
    byte_size: int


class PrecompiledRegistry:
    """Permanently stored pre-built archives, served with no staging and never deleted."""

    def __init__(self):
        self._datasets: dict[str, PrecompiledDataset] = {}

    def register(self, dataset_id: str, name: str, archive_path: str | Path, file_count: int) -> None:
        path = Path(archive_path)
        self._datasets[dataset_id] = PrecompiledDataset(
            dataset_id=dataset_id,
            name=name,
            archive_path=path,
            file_count=file_count,
            byte_size=path.stat().st_size,
        )

    @classmethod
    def from_index_file(cls, index_path: str | Path) -> "PrecompiledRegistry":
        """Index format: JSON list of {id, name, archive, file_count}; relative
        archive paths resolve against the index file's directory."""
        index_path = Path(index_path)
        registry = cls()
        for entry in json.loads(index_path.read_text()):
            archive_path = Path(entry["archive"])
            if not archive_path.is_absolute():
                archive_path = index_path.parent / archive_path
            registry.register(entry["id"], entry["name"], archive_path, int(entry["file_count"]))
        return registry

    def list(self) -> list[PrecompiledDataset]:
        return sorted(self._datasets.values(), key=lambda d: d.dataset_id)

    def get(self, dataset_id: str) -> PrecompiledDataset:
        try:
            return self._datasets[dataset_id]
        except KeyError:
            raise UnknownDataset(dataset_id) from None

    def stream(self, dataset_id: str, chunk_size: int = SERVE_CHUNK_BYTES) -> Iterator[bytes]:
        dataset = self.get(dataset_id)
        with open(dataset.archive_path, "rb") as fh:
            while chunk := fh.read(chunk_size):
                yield chunk
