"""Gateway configuration: one JSON document describing the whole deployment."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ..jobengine import PartitionPolicy
from ..objectstore import LatencyModel


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class TlsConfig:
    """Either explicit cert/key paths or a directory to hold a generated
    self-signed development pair."""

    cert_path: Path | None = None
    key_path: Path | None = None
    self_signed_dir: Path | None = None

    def __post_init__(self):
        explicit = self.cert_path is not None and self.key_path is not None
        if not explicit and self.self_signed_dir is None:
            raise ConfigError("tls needs cert+key paths or a self_signed_dir")


@dataclass(frozen=True)
class UserEntry:
    username: str
    password_hash: str


@dataclass(frozen=True)
class GatewayConfig:
    catalog_snapshot: Path
    object_store_root: Path
    staging_dir: Path
    tls: TlsConfig
    users: tuple[UserEntry, ...]
    host: str = "127.0.0.1"
    port: int = 8443
    latency: LatencyModel = field(default_factory=LatencyModel)
    partition: PartitionPolicy = field(default_factory=PartitionPolicy)
    staging_budget_bytes: int = 4 * 1024 * 1024 * 1024
    job_ttl_seconds: float = 24 * 3600.0
    staging_timeout_seconds: float = 600.0
    rate_limit_per_sec: float = 0.0  # 0 disables the per-connection limiter
    max_live_jobs: int = 16
    precompiled_index: Path | None = None
    allowed_origin: str | None = None
    ui_dir: Path | None = None


def _path(doc: dict, key: str, base: Path, required: bool = True) -> Path | None:
    value = doc.get(key)
    if value is None:
        if required:
            raise ConfigError(f"missing config key: {key}")
        return None
    if not isinstance(value, str):
        raise ConfigError(f"config key {key} must be a path string")
    p = Path(value)
    return p if p.is_absolute() else base / p


def load_config(path: str | Path) -> GatewayConfig:
    """Parse and validate the gateway config file.

    Relative paths resolve against the config file's directory, so a corpus
    plus config can be moved around as one tree.
    """
    path = Path(path)
    base = path.parent.resolve()
    try:
        doc = json.loads(path.read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")

    tls_doc = doc.get("tls")
    if not isinstance(tls_doc, dict):
        raise ConfigError("config needs a 'tls' object")
    tls = TlsConfig(
        cert_path=_path(tls_doc, "cert", base, required=False),
        key_path=_path(tls_doc, "key", base, required=False),
        self_signed_dir=_path(tls_doc, "self_signed_dir", base, required=False),
    )

    users_doc = doc.get("users")
    if not isinstance(users_doc, list) or not users_doc:
        raise ConfigError("config needs a non-empty 'users' list")
    users = []
    for entry in users_doc:
        try:
            users.append(UserEntry(username=entry["username"], password_hash=entry["password_hash"]))
        except (TypeError, KeyError) as exc:
            raise ConfigError(f"bad user entry {entry!r}") from exc

    latency_doc = doc.get("latency", {})
    partition_doc = doc.get("partition", {})
    try:
        latency = LatencyModel(
            per_object_delay_ms=float(latency_doc.get("per_object_delay_ms", 0.0)),
            bandwidth_cap_bytes_per_sec=float(latency_doc.get("bandwidth_cap_bytes_per_sec", 0.0)),
        )
        partition = PartitionPolicy(
            target_part_bytes=int(partition_doc.get("target_part_bytes", 64 * 1024 * 1024)),
            max_part_files=int(partition_doc.get("max_part_files", 1000)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad latency/partition settings: {exc}") from exc

    listen = doc.get("listen", {})
    return GatewayConfig(
        catalog_snapshot=_path(doc, "catalog_snapshot", base),
        object_store_root=_path(doc, "object_store_root", base),
        staging_dir=_path(doc, "staging_dir", base),
        tls=tls,
        users=tuple(users),
        host=listen.get("host", "127.0.0.1"),
        port=int(listen.get("port", 8443)),
        latency=latency,
        partition=partition,
        staging_budget_bytes=int(doc.get("staging_budget_bytes", 4 * 1024 * 1024 * 1024)),
        job_ttl_seconds=float(doc.get("job_ttl_seconds", 24 * 3600.0)),
        staging_timeout_seconds=float(doc.get("staging_timeout_seconds", 600.0)),
        rate_limit_per_sec=float(doc.get("rate_limit_per_sec", 0.0)),
        max_live_jobs=int(doc.get("max_live_jobs", 16)),
        precompiled_index=_path(doc, "precompiled_index", base, required=False),
        allowed_origin=doc.get("allowed_origin"),
        ui_dir=_path(doc, "ui_dir", base, required=False),
    )
