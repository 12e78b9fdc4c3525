from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import pytest

from plantportal.catalog import Catalog
from plantportal.clientcore import BackoffPolicy, ClientConfig, PortalClient
from plantportal.datagen import CorpusSpec, Manifest, generate
from plantportal.gateway.config import GatewayConfig, TlsConfig, UserEntry
from plantportal.gateway.security import ensure_self_signed_cert, hash_password
from plantportal.gateway.serve import run_gateway
from plantportal.jobengine import PartitionPolicy
from plantportal.objectstore import LatencyModel, LocalDirectoryStore

# Hash once; per-test pbkdf2 would dominate fixture setup.
USERS = {"alice": "wonder", "bob": "builder"}
USER_HASHES = {name: hash_password(password) for name, password in USERS.items()}

FAST_BACKOFF = BackoffPolicy(initial_ms=20, factor=1.6, cap_ms=200)


@dataclass
class Corpus:
    root: Path
    store_root: Path
    catalog_path: Path
    manifest: Manifest
    spec: CorpusSpec

    def load_catalog(self) -> Catalog:
        return Catalog.load_snapshot(self.catalog_path)


def build_corpus(root: Path, spec: CorpusSpec) -> Corpus:
    root.mkdir(parents=True, exist_ok=True)
    store = LocalDirectoryStore(root / "store")
    catalog = Catalog()
    manifest = generate(spec, store, catalog)
    catalog.save_snapshot(root / "catalog.jsonl")
    manifest.save(root / "manifest.jsonl")
    return Corpus(
        root=root,
        store_root=root / "store",
        catalog_path=root / "catalog.jsonl",
        manifest=manifest,
        spec=spec,
    )


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory) -> Corpus:
    """~320 lab files, ~30 MB; the workhorse for functional tests."""
    return build_corpus(
        tmp_path_factory.mktemp("corpus-small"), CorpusSpec(rng_seed=42, n_originals=40)
    )


@pytest.fixture(scope="session")
def mixed_corpus(tmp_path_factory) -> Corpus:
    """Small corpus that also carries field-class records."""
    return build_corpus(
        tmp_path_factory.mktemp("corpus-mixed"),
        CorpusSpec(rng_seed=11, n_originals=12, n_field_originals=8),
    )


@pytest.fixture(scope="session")
def big_corpus(tmp_path_factory) -> Corpus:
    """The full seed-42 corpus (~2,700 files, ~250 MB) used by acceptance runs."""
    return build_corpus(tmp_path_factory.mktemp("corpus-big"), CorpusSpec())


@pytest.fixture(scope="session")
def tls_dir(tmp_path_factory) -> Path:
    directory = tmp_path_factory.mktemp("tls")
    ensure_self_signed_cert(directory)
    return directory


def make_gateway_config(
    corpus: Corpus,
    workdir: Path,
    tls_dir: Path,
    *,
    latency: LatencyModel | None = None,
    partition: PartitionPolicy | None = None,
    users: dict[str, str] | None = None,
    rate_limit_per_sec: float = 0.0,
    staging_budget_bytes: int = 4 * 1024 * 1024 * 1024,
    max_live_jobs: int = 32,
    job_ttl_seconds: float = 3600.0,
    staging_timeout_seconds: float = 600.0,
    precompiled_index: Path | None = None,
    ui_dir: Path | None = None,
) -> GatewayConfig:
    user_hashes = USER_HASHES if users is None else {u: hash_password(p) for u, p in users.items()}
    return GatewayConfig(
        catalog_snapshot=corpus.catalog_path,
        object_store_root=corpus.store_root,
        staging_dir=workdir / "staging",
        tls=TlsConfig(self_signed_dir=tls_dir),
        users=tuple(UserEntry(u, h) for u, h in user_hashes.items()),
        latency=latency or LatencyModel(),
        partition=partition or PartitionPolicy(),
        staging_budget_bytes=staging_budget_bytes,
        max_live_jobs=max_live_jobs,
        job_ttl_seconds=job_ttl_seconds,
        staging_timeout_seconds=staging_timeout_seconds,
        rate_limit_per_sec=rate_limit_per_sec,
        precompiled_index=precompiled_index,
        ui_dir=ui_dir,
    )


@pytest.fixture
def gateway_factory(tmp_path, tls_dir):
    """Start live TLS gateways on demand; all are stopped at teardown."""
    handles = []
    counter = [0]

    def factory(corpus: Corpus, *, store_wrapper=None, **config_kwargs):
        counter[0] += 1
        workdir = tmp_path / f"gw-{counter[0]}"
        config = make_gateway_config(corpus, workdir, tls_dir, **config_kwargs)
        handle = run_gateway(config, store_wrapper=store_wrapper)
        handles.append(handle)
        return handle

    yield factory
    for handle in handles:
        handle.stop()


@pytest.fixture
def client_factory(tmp_path):
    clients = []
    counter = [0]

    def factory(
        handle,
        username: str = "alice",
        password: str | None = None,
        *,
        backoff: BackoffPolicy = FAST_BACKOFF,
        max_tries: int = 40,
        tls_trust_override: str | None = None,
        **client_kwargs,
    ) -> PortalClient:
        counter[0] += 1
        base = tmp_path / f"client-{counter[0]}"
        config = ClientConfig(
            server_url=handle.base_url,
            username=username,
            password=USERS.get(username, "") if password is None else password,
            sample_path=base / "samples",
            download_path=base / "downloads",
            backoff=backoff,
            max_tries=max_tries,
            tls_trust=tls_trust_override or str(handle.cert_path),
        )
        client = PortalClient(config, **client_kwargs)
        clients.append(client)
        return client

    yield factory
    for client in clients:
        client.close()
