"""Embeddable download client: request wrapper, polling loop, extraction.

The part loop sleeps before every status poll following an exponential
backoff; any positive answer from the server resets the backoff and the try
counter, and after ``max_tries`` consecutive negative polls the part is
abandoned and the loop moves on to the next one. Parts are fetched strictly
one at a time in ascending order, matching the server's deletion gating.

Archives are extracted into a temporary directory and files moved to their
final names one atomic rename at a time, so an interrupted run never leaves a
partially written file at its final path.
"""

from __future__ import annotations

import json
import os
import shutil
import ssl
import tempfile
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Literal

import httpx

from .archive import ExtractionError, extract_archive
from .catalog import Query, QuerySummary, query_to_wire

CONFIG_ENV = "TBC_CONFIG"
SERVER_URL_ENV = "TBC_SERVER_URL"

ProgressEvent = Literal["polled", "ready", "fetched", "extracted", "abandoned"]
ProgressCallback = Callable[[str, int, ProgressEvent], None]


class ClientError(Exception):
    pass


class ClientConfigError(ClientError):
    pass


class ConnectionFailed(ClientError):
    pass


class TlsError(ClientError):
    pass


class ApiFailure(ClientError):
    """A 4xx response carrying a machine-readable error code."""

    def __init__(self, status: int, code: str, message: str):
        super().__init__(f"{status} {code}: {message}")
        self.status = status
        self.code = code
        self.message = message


class ServerError(ClientError):
    """A 5xx response; the body is kept for diagnostics."""

    def __init__(self, status: int, code: str, body: str):
        super().__init__(f"server error {status} ({code})")
        self.status = status
        self.code = code
        self.body = body


class EmptyResult(ClientError):
    pass


@dataclass(frozen=True)
class BackoffPolicy:
    """delay(n) = min(initial * factor**n, cap), rounded to whole milliseconds."""

    initial_ms: int = 200
    factor: float = 1.6
    cap_ms: int = 5000

    def __post_init__(self):
        if self.initial_ms <= 0 or self.factor <= 1.0 or self.cap_ms < self.initial_ms:
            raise ClientConfigError("backoff needs initial > 0, factor > 1, cap >= initial")

    def delay_ms(self, n: int) -> int:
        return round(min(self.initial_ms * self.factor**n, float(self.cap_ms)))

    def delay_seconds(self, n: int) -> float:
        return self.delay_ms(n) / 1000.0


def default_config_path() -> Path:
    env = os.environ.get(CONFIG_ENV)
    if env:
        return Path(env)
    xdg = os.environ.get("XDG_CONFIG_HOME")
    base = Path(xdg) if xdg else Path.home() / ".config"
    return base / "plantportal" / "config.json"


@dataclass(frozen=True)
class ClientConfig:
    server_url: str = ""
    username: str = ""
    password: str = ""
    sample_path: Path = Path(".")
    download_path: Path = Path(".")
    backoff: BackoffPolicy = field(default_factory=BackoffPolicy)
    max_tries: int = 25
    tls_trust: str = "system"  # "system" or a path to a trusted certificate

    def to_json(self) -> dict:
        return {
            "server_url": self.server_url,
            "username": self.username,
            "password": self.password,
            "sample_path": str(self.sample_path),
            "download_path": str(self.download_path),
            "backoff": {
                "initial_ms": self.backoff.initial_ms,
                "factor": self.backoff.factor,
                "cap_ms": self.backoff.cap_ms,
            },
            "max_tries": self.max_tries,
            "tls_trust": self.tls_trust,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ClientConfig":
        try:
            backoff_doc = doc.get("backoff", {})
            return cls(
                server_url=doc.get("server_url", ""),
                username=doc.get("username", ""),
                password=doc.get("password", ""),
                sample_path=Path(doc.get("sample_path", ".")),
                download_path=Path(doc.get("download_path", ".")),
                backoff=BackoffPolicy(
                    initial_ms=int(backoff_doc.get("initial_ms", 200)),
                    factor=float(backoff_doc.get("factor", 1.6)),
                    cap_ms=int(backoff_doc.get("cap_ms", 5000)),
                ),
                max_tries=int(doc.get("max_tries", 25)),
                tls_trust=doc.get("tls_trust", "system"),
            )
        except (TypeError, ValueError) as exc:
            raise ClientConfigError(f"bad client config: {exc}") from exc

    def save(self, path: str | Path | None = None) -> Path:
        """Write the config; contains credentials, so permissions are owner-only."""
        path = Path(path) if path is not None else default_config_path()
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(self.to_json(), indent=2) + "\n")
        tmp.chmod(0o600)
        tmp.replace(path)
        return path

    @classmethod
    def load(cls, path: str | Path | None = None) -> "ClientConfig":
        path = Path(path) if path is not None else default_config_path()
        try:
            doc = json.loads(path.read_text())
        except FileNotFoundError:
            raise ClientConfigError(
                f"no client config at {path}; run 'plantportal config set-credentials' first"
            ) from None
        except ValueError as exc:
            raise ClientConfigError(f"unreadable client config {path}: {exc}") from exc
        config = cls.from_json(doc)
        env_url = os.environ.get(SERVER_URL_ENV)
        if env_url:
            config = replace(config, server_url=env_url)
        return config


@dataclass
class PartOutcome:
    index: int
    completed: bool
    cause: str | None = None  # abandonment cause when not completed
    files: list[Path] = field(default_factory=list)
    bytes_written: int = 0


@dataclass
class DownloadReport:
    job_id: str
    parts_total: int
    parts_completed: int
    parts_abandoned: list[int]
    abandoned_causes: dict[int, str]
    files_written: int
    bytes_written: int
    wall_time_seconds: float

    def to_json(self) -> dict:
        return {
            "job_id": self.job_id,
            "parts_total": self.parts_total,
            "parts_completed": self.parts_completed,
            "parts_abandoned": self.parts_abandoned,
            "abandoned_causes": self.abandoned_causes,
            "files_written": self.files_written,
            "bytes_written": self.bytes_written,
            "wall_time_seconds": self.wall_time_seconds,
        }


class PortalClient:
    """Synchronous client over the gateway's /api/v1 endpoints.

    ``sleep`` is injectable so the backoff law is testable against a fake
    clock; ``transport`` is injectable for tests that stub the server.
    """

    def __init__(
        self,
        config: ClientConfig,
        *,
        sleep: Callable[[float], None] = time.sleep,
        progress: ProgressCallback | None = None,
        transport: httpx.BaseTransport | None = None,
        timeout: float = 60.0,
    ):
        if not config.server_url:
            raise ClientConfigError("client config has no server_url")
        if not config.server_url.startswith("https://"):
            raise TlsError(f"server_url must use https: {config.server_url!r}")
        self.config = config
        self._sleep = sleep
        self._progress = progress or (lambda job_id, index, event: None)
        self._http = httpx.Client(
            base_url=config.server_url,
            auth=(config.username, config.password),
            verify=trust_context(config.tls_trust) if transport is None else False,
            timeout=timeout,
            transport=transport,
        )

    def close(self) -> None:
        self._http.close()

    def __enter__(self) -> "PortalClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # --- request wrapper --------------------------------------------------

    def _raise_for_status(self, response: httpx.Response) -> None:
        if response.status_code < 400:
            return
        try:
            doc = response.json()
            code = doc.get("code", "unknown")
            message = doc.get("message", "")
        except ValueError:
            code, message = "unknown", response.text[:200]
        if response.status_code >= 500:
            raise ServerError(response.status_code, code, message)
        raise ApiFailure(response.status_code, code, message)

    def send_req(self, method: str, path: str, body: dict | None = None) -> httpx.Response:
        """Send one JSON request; TLS and credentials come from the config."""
        try:
            response = self._http.request(method, path, json=body)
        except httpx.TransportError as exc:
            raise _translate_transport_error(exc) from exc
        self._raise_for_status(response)
        return response

    def _stream_to_file(self, method: str, path: str, dest: Path, body: dict | None = None) -> int:
        """Stream a response body to ``dest``; returns the byte count."""
        try:
            with self._http.stream(method, path, json=body) as response:
                if response.status_code >= 400:
                    response.read()
                    self._raise_for_status(response)
                written = 0
                with open(dest, "wb") as fh:
                    for chunk in response.iter_bytes(chunk_size=256 * 1024):
                        fh.write(chunk)
                        written += len(chunk)
                return written
        except httpx.TransportError as exc:
            raise _translate_transport_error(exc) from exc

    def health(self) -> bool:
        return self.send_req("GET", "/health").json().get("status") == "ok"

    # --- query operations ---------------------------------------------------

    def check_query(self, query: Query) -> QuerySummary:
        query.validate()  # reject malformed queries before any network call
        doc = self.send_req("POST", "/api/v1/check", query_to_wire(query)).json()
        return QuerySummary(
            file_count=int(doc["file_count"]),
            part_count=int(doc["part_count"]),
            total_bytes=int(doc["total_bytes"]),
        )

    def get_sample(self, query: Query) -> list[Path]:
        """Fetch and extract a sample archive; returns the written paths."""
        query.validate()
        dest = Path(self.config.sample_path)
        dest.mkdir(parents=True, exist_ok=True)
        try:
            return self._fetch_and_extract("POST", "/api/v1/sample", dest, body=query_to_wire(query))
        except ApiFailure as exc:
            if exc.code == "empty_result":
                raise EmptyResult("empty result: no files match this query") from exc
            raise

    def list_precompiled(self) -> list[dict]:
        return self.send_req("GET", "/api/v1/precompiled").json()

    def get_precompiled(self, dataset_id: str) -> list[Path]:
        dest = Path(self.config.download_path)
        dest.mkdir(parents=True, exist_ok=True)
        return self._fetch_and_extract("GET", f"/api/v1/precompiled/{dataset_id}", dest)

    # --- download loop ------------------------------------------------------

    def download(self, query: Query) -> DownloadReport:
        """Create a job and fetch its parts sequentially; abandoned parts are
        recorded in the report and do not abort the remainder."""
        query.validate()
        if query.precompiled_id is not None:
            raise ClientConfigError("use get_precompiled() for precompiled datasets")
        started = time.monotonic()
        try:
            doc = self.send_req("POST", "/api/v1/jobs", query_to_wire(query)).json()
        except ApiFailure as exc:
            if exc.code == "empty_result":
                raise EmptyResult("empty result: no files match this query") from exc
            raise
        job_id, part_count = doc["job_id"], int(doc["part_count"])

        outcomes: list[PartOutcome] = []
        for index in range(part_count):
            try:
                outcomes.append(self.get_files(job_id, index))
            except ConnectionFailed:
                # The link died mid-job: the remainder cannot even be polled,
                # so it is reported abandoned rather than raised away.
                for rest in range(index, part_count):
                    self._progress(job_id, rest, "abandoned")
                    outcomes.append(PartOutcome(rest, False, cause="connection_failed"))
                break
        abandoned = [o.index for o in outcomes if not o.completed]
        return DownloadReport(
            job_id=job_id,
            parts_total=part_count,
            parts_completed=sum(1 for o in outcomes if o.completed),
            parts_abandoned=abandoned,
            abandoned_causes={o.index: o.cause or "" for o in outcomes if not o.completed},
            files_written=sum(len(o.files) for o in outcomes),
            bytes_written=sum(o.bytes_written for o in outcomes),
            wall_time_seconds=time.monotonic() - started,
        )

    def get_files(self, job_id: str, index: int) -> PartOutcome:
        """Poll one part until Ready, then fetch and extract it.

        Sleeps delay(0), delay(1), ... before successive polls; a positive
        status resets both the backoff step and the try counter. Consecutive
        negative polls beyond max_tries abandon the part, as do a consumed
        (gone) or failed part.
        """
        policy = self.config.backoff
        step = 0
        negative_polls = 0
        fetch_failures = 0
        while True:
            self._sleep(policy.delay_seconds(step))
            try:
                status = self.send_req(
                    "GET", f"/api/v1/jobs/{job_id}/parts/{index}/status"
                ).json()
            except ApiFailure as exc:
                cause = "gone" if exc.code == "part_gone" else exc.code
                self._progress(job_id, index, "abandoned")
                return PartOutcome(index, False, cause=cause)
            except ServerError as exc:
                self._progress(job_id, index, "abandoned")
                return PartOutcome(index, False, cause=exc.code)
            self._progress(job_id, index, "polled")

            if not status.get("ready"):
                negative_polls += 1
                step += 1
                if negative_polls >= self.config.max_tries:
                    self._progress(job_id, index, "abandoned")
                    return PartOutcome(index, False, cause="max_tries")
                continue

            # Positive answer: backoff and try counter start over.
            self._progress(job_id, index, "ready")
            step = 0
            negative_polls = 0
            try:
                files, nbytes = self._fetch_part(job_id, index)
                return PartOutcome(index, True, files=files, bytes_written=nbytes)
            except ApiFailure as exc:
                cause = "gone" if exc.code == "part_gone" else exc.code
                self._progress(job_id, index, "abandoned")
                return PartOutcome(index, False, cause=cause)
            except (ConnectionFailed, ServerError, ExtractionError) as exc:
                fetch_failures += 1
                if fetch_failures >= self.config.max_tries:
                    self._progress(job_id, index, "abandoned")
                    cause = "extraction" if isinstance(exc, ExtractionError) else "transfer"
                    return PartOutcome(index, False, cause=cause)
                continue  # re-poll with reset backoff

    def _fetch_part(self, job_id: str, index: int) -> tuple[list[Path], int]:
        dest = Path(self.config.download_path)
        dest.mkdir(parents=True, exist_ok=True)
        files = self._fetch_and_extract(
            "GET", f"/api/v1/jobs/{job_id}/parts/{index}", dest,
            progress_key=(job_id, index),
        )
        return files, sum(f.stat().st_size for f in files)

    def _fetch_and_extract(
        self,
        method: str,
        path: str,
        dest: Path,
        body: dict | None = None,
        progress_key: tuple[str, int] | None = None,
    ) -> list[Path]:
        """Spool an archive response to disk, extract to a scratch dir, then
        move every file to its final name with an atomic rename."""
        scratch = Path(tempfile.mkdtemp(prefix=".portal-", dir=dest))
        try:
            tar_path = scratch / "part.tar"
            self._stream_to_file(method, path, tar_path, body=body)
            if progress_key:
                self._progress(progress_key[0], progress_key[1], "fetched")
            extracted = extract_archive(tar_path, scratch / "files")
            final_paths = []
            for item in extracted:
                target = dest / item.name
                os.replace(item, target)
                final_paths.append(target)
            if progress_key:
                self._progress(progress_key[0], progress_key[1], "extracted")
            return final_paths
        finally:
            shutil.rmtree(scratch, ignore_errors=True)


def trust_context(tls_trust: str) -> ssl.SSLContext | bool:
    """TLS verification material: the system store, or a pinned certificate."""
    if tls_trust == "system":
        return True
    try:
        return ssl.create_default_context(cafile=tls_trust)
    except (OSError, ssl.SSLError) as exc:
        raise TlsError(f"cannot load trusted certificate {tls_trust!r}: {exc}") from exc


def _translate_transport_error(exc: httpx.TransportError) -> ClientError:
    text = f"{type(exc).__name__}: {exc}"
    if "ssl" in text.lower() or "certificate" in text.lower():
        return TlsError(text)
    return ConnectionFailed(text)
