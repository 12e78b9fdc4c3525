"""Parallel-user load harness: times on-demand downloads against precompiled
fetches, solo and under contention, in the shape of a per-user results table."""

from __future__ import annotations

import shutil
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from .catalog import Query, query_to_wire
from .clientcore import BackoffPolicy, ClientConfig, PortalClient
from .gateway.config import GatewayConfig, TlsConfig, UserEntry
from .gateway.security import hash_password
from .gateway.serve import GatewayHandle, run_gateway
from .jobengine import PartitionPolicy
from .objectstore import LatencyModel


class HarnessTimeout(Exception):
    pass


# Snappy polling so measured times track staging, not poll quantization.
BENCH_BACKOFF = BackoffPolicy(initial_ms=50, factor=1.6, cap_ms=400)


@dataclass
class UserResult:
    user: str
    download_seconds: float
    download_mb_s: float
    precompiled_seconds: float | None

    def to_json(self) -> dict:
        return {
            "user": self.user,
            "download_seconds": round(self.download_seconds, 3),
            "download_mb_s": round(self.download_mb_s, 3),
            "precompiled_seconds": (
                None if self.precompiled_seconds is None else round(self.precompiled_seconds, 3)
            ),
        }


@dataclass
class BenchResult:
    latency: dict
    query: dict
    total_bytes: int
    solo: UserResult
    rows: list[UserResult] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "latency": self.latency,
            "query": self.query,
            "total_bytes": self.total_bytes,
            "solo": self.solo.to_json(),
            "parallel": [r.to_json() for r in self.rows],
        }

    def format_table(self) -> str:
        header = f"{'user':<14} {'download':>10} {'MB/s':>8} {'precompiled':>12}"
        lines = [header, "-" * len(header)]
        for r in [self.solo] + self.rows:
            pre = "-" if r.precompiled_seconds is None else f"{r.precompiled_seconds:.1f}s"
            lines.append(
                f"{r.user:<14} {r.download_seconds:>9.1f}s {r.download_mb_s:>8.2f} {pre:>12}"
            )
        lines.append(
            f"latency: per_object_delay_ms={self.latency['per_object_delay_ms']}"
            f" bandwidth_cap={self.latency['bandwidth_cap_bytes_per_sec']}"
        )
        return "\n".join(lines)


def _user_config(handle: GatewayHandle, username: str, password: str, download_dir: Path) -> ClientConfig:
    return ClientConfig(
        server_url=handle.base_url,
        username=username,
        password=password,
        sample_path=download_dir / "samples",
        download_path=download_dir,
        backoff=BENCH_BACKOFF,
        max_tries=200,
        tls_trust=str(handle.cert_path),
    )


def _timed_download(client: PortalClient, query: Query, precompiled_id: str | None) -> UserResult:
    started = time.monotonic()
    report = client.download(query)
    download_seconds = time.monotonic() - started
    if report.parts_abandoned:
        raise HarnessTimeout(f"bench download abandoned parts {report.parts_abandoned}")
    precompiled_seconds = None
    if precompiled_id is not None:
        started = time.monotonic()
        client.get_precompiled(precompiled_id)
        precompiled_seconds = time.monotonic() - started
    speed = report.bytes_written / max(download_seconds, 1e-9) / 1e6
    return UserResult(client.config.username, download_seconds, speed, precompiled_seconds)


def run_parallel_user_bench(
    handle: GatewayHandle,
    credentials: list[tuple[str, str]],
    query: Query,
    *,
    n_users: int,
    precompiled_id: str | None = None,
    workdir: str | Path,
    timeout_seconds: float = 600.0,
) -> BenchResult:
    """Measure a solo baseline with the first user, then ``n_users`` concurrent
    downloads (each followed by a precompiled fetch when one is configured)."""
    workdir = Path(workdir)
    if len(credentials) < n_users:
        raise ValueError("need one credential pair per user")

    def fresh_dir(name: str) -> Path:
        d = workdir / name
        shutil.rmtree(d, ignore_errors=True)
        d.mkdir(parents=True)
        return d

    solo_user, solo_pass = credentials[0]
    with PortalClient(_user_config(handle, solo_user, solo_pass, fresh_dir("solo"))) as client:
        solo = _timed_download(client, query, precompiled_id)
        total_bytes = client.check_query(query).total_bytes

    results: list[UserResult | None] = [None] * n_users
    errors: list[BaseException] = []

    def worker(i: int):
        username, password = credentials[i]
        config = _user_config(handle, username, password, fresh_dir(f"user-{i + 1}"))
        try:
            with PortalClient(config) as client:
                results[i] = _timed_download(client, query, precompiled_id)
        except BaseException as exc:  # surfaced after join
            errors.append(exc)

    threads = [threading.Thread(target=worker, args=(i,), name=f"bench-user-{i + 1}") for i in range(n_users)]
    for t in threads:
        t.start()
    deadline = time.monotonic() + timeout_seconds
    for t in threads:
        t.join(timeout=max(0.0, deadline - time.monotonic()))
        if t.is_alive():
            raise HarnessTimeout(f"bench user thread {t.name} still running after {timeout_seconds}s")
    if errors:
        raise errors[0]

    return BenchResult(
        latency={
            "per_object_delay_ms": handle.components.config.latency.per_object_delay_ms,
            "bandwidth_cap_bytes_per_sec": handle.components.config.latency.bandwidth_cap_bytes_per_sec,
        },
        query=query_to_wire(query),
        total_bytes=total_bytes,
        solo=solo,
        rows=[r for r in results if r is not None],
    )


def host_corpus_gateway(
    corpus_dir: str | Path,
    workdir: str | Path,
    *,
    latency: LatencyModel,
    n_users: int,
    partition: PartitionPolicy | None = None,
    staging_budget_bytes: int = 4 * 1024 * 1024 * 1024,
) -> tuple[GatewayHandle, list[tuple[str, str]]]:
    """Spin up an in-process gateway over a generated corpus directory and
    provision one account per bench user. Caller stops the handle."""
    corpus_dir = Path(corpus_dir)
    workdir = Path(workdir)
    password = "bench-pass"
    password_hash = hash_password(password)  # same hash for all bench accounts
    users = tuple(UserEntry(f"bench-user-{i + 1}", password_hash) for i in range(n_users))
    precompiled_index = corpus_dir / "precompiled" / "index.json"
    config = GatewayConfig(
        catalog_snapshot=corpus_dir / "catalog.jsonl",
        object_store_root=corpus_dir / "store",
        staging_dir=workdir / "staging",
        tls=TlsConfig(self_signed_dir=workdir / "tls"),
        users=users,
        latency=latency,
        partition=partition or PartitionPolicy(),
        staging_budget_bytes=staging_budget_bytes,
        max_live_jobs=max(16, 2 * n_users),
        precompiled_index=precompiled_index if precompiled_index.exists() else None,
    )
    handle = run_gateway(config)
    return handle, [(u.username, password) for u in users]
