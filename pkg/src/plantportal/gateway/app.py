"""HTTP surface of the portal: /api/v1 endpoints over the domain components.

Request bodies are parsed by hand and pushed through the catalog's wire-form
sanitizer before anything else sees them; every failure maps to a stable
{code, message} JSON error. Handlers that can block (object-store fetches,
archive builds) run in the worker threadpool so streaming one client's part
never stalls another client's polling.
"""

from __future__ import annotations

import asyncio
import json
import logging
import secrets
from dataclasses import dataclass

from fastapi import FastAPI, Request
from starlette.concurrency import run_in_threadpool
from starlette.middleware.cors import CORSMiddleware
from starlette.responses import JSONResponse, Response, StreamingResponse
from starlette.staticfiles import StaticFiles

from .. import archive
from ..catalog import (
    Catalog,
    FileType,
    MalformedQuery,
    Query,
    QuerySummary,
    record_json_bytes,
)
from ..catalog import query_from_wire
from ..jobengine import (
    JobEngine,
    PartGone,
    PartNotReady,
    PartFailed,
    PartState,
    PrecompiledRegistry,
    TooManyLiveJobs,
    UnknownDataset,
    UnknownJob,
    UnknownPart,
    part_file,
    partition,
)
from ..objectstore import LocalDirectoryStore
from .config import GatewayConfig
from .security import UserStore, parse_basic_auth

log = logging.getLogger(__name__)

TAR_MEDIA_TYPE = "application/x-tar"
SAMPLE_PER_FILETYPE = 20


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


@dataclass
class PortalComponents:
    config: GatewayConfig
    catalog: Catalog
    store: LocalDirectoryStore
    engine: JobEngine
    precompiled: PrecompiledRegistry
    users: UserStore

    def close(self) -> None:
        self.engine.close()


def build_components(config: GatewayConfig, *, store_wrapper=None) -> PortalComponents:
    catalog = Catalog.load_snapshot(config.catalog_snapshot)
    store = LocalDirectoryStore(config.object_store_root, config.latency)
    if store_wrapper is not None:
        store = store_wrapper(store)
    engine = JobEngine(
        store,
        config.staging_dir,
        policy=config.partition,
        staging_budget_bytes=config.staging_budget_bytes,
        max_live_jobs=config.max_live_jobs,
        job_ttl_seconds=config.job_ttl_seconds,
        staging_timeout_seconds=config.staging_timeout_seconds,
    )
    if config.precompiled_index is not None:
        precompiled = PrecompiledRegistry.from_index_file(config.precompiled_index)
    else:
        precompiled = PrecompiledRegistry()
    users = UserStore((u.username, u.password_hash) for u in config.users)
    return PortalComponents(
        config=config,
        catalog=catalog,
        store=store,
        engine=engine,
        precompiled=precompiled,
        users=users,
    )


class ConnectionRateLimiter:
    """Delays requests so each connection stays under a configured rate.

    Keyed by (client host, client port): one keep-alive connection maps to one
    key. Requests are never rejected, only spaced out.
    """

    def __init__(self, app, per_sec: float):
        self.app = app
        self.min_interval = 1.0 / per_sec
        self._next_allowed: dict[tuple, float] = {}
        self._lock = asyncio.Lock()

    async def __call__(self, scope, receive, send):
        if scope["type"] != "http":
            await self.app(scope, receive, send)
            return
        key = tuple(scope.get("client") or ("?", 0))
        async with self._lock:
            now = asyncio.get_running_loop().time()
            if len(self._next_allowed) > 4096:
                self._next_allowed = {
                    k: v for k, v in self._next_allowed.items() if v > now
                }
            allowed = max(self._next_allowed.get(key, now), now)
            self._next_allowed[key] = allowed + self.min_interval
        wait = allowed - now
        if wait > 0:
            await asyncio.sleep(wait)
        await self.app(scope, receive, send)


def _authenticate(request: Request, components: PortalComponents) -> str:
    credentials = parse_basic_auth(request.headers.get("authorization"))
    if credentials is None:
        raise ApiError(401, "missing_credentials", "basic auth credentials required")
    username, password = credentials
    if not components.users.authenticate(username, password):
        raise ApiError(401, "bad_credentials", "unknown user or wrong password")
    return username


async def _read_query(request: Request) -> Query:
    raw = await request.body()
    try:
        doc = json.loads(raw.decode("utf-8")) if raw else {}
    except (ValueError, UnicodeDecodeError):
        raise ApiError(400, "malformed_query", "body is not valid JSON") from None
    try:
        return query_from_wire(doc)
    except MalformedQuery as exc:
        raise ApiError(400, "malformed_query", str(exc)) from exc


def _job_access(components: PortalComponents, username: str, job_id: str) -> None:
    try:
        owner = components.engine.job_owner(job_id)
    except UnknownJob:
        raise ApiError(404, "unknown_job", f"no live job {job_id!r}") from None
    if owner != username:
        raise ApiError(403, "not_owner", "job belongs to another user")


def _parse_part_index(value: str) -> int:
    if not value.isdigit():
        raise ApiError(404, "unknown_part", f"part index must be a non-negative integer: {value!r}")
    return int(value)


def _check_summary(components: PortalComponents, query: Query) -> QuerySummary:
    if query.precompiled_id is not None:
        try:
            dataset = components.precompiled.get(query.precompiled_id)
        except UnknownDataset:
            raise ApiError(404, "unknown_dataset", f"no precompiled dataset {query.precompiled_id!r}") from None
        return QuerySummary(dataset.file_count, 1, dataset.byte_size)
    records = components.catalog.list_matches(query)
    parts = partition([part_file(r) for r in records], components.config.partition)
    return QuerySummary(len(records), len(parts), sum(r.byte_size for r in records))


def _build_sample(components: PortalComponents, query: Query) -> bytes:
    """Synchronously assemble the sample archive: up to 20 blobs per selected
    filetype plus a metadata sidecar for every sampled image."""
    seed = secrets.randbits(63)
    sampled = components.catalog.sample_matches(query, SAMPLE_PER_FILETYPE, seed)
    if not sampled:
        raise ApiError(404, "empty_result", "no files match this query")
    entries: list[tuple[str, bytes]] = []
    for record in sampled:
        entries.append((archive.entry_name(record), components.store.get(record.blob_key)))
        if record.filetype is not FileType.METADATA_JSON:
            entries.append((record.record_id + ".json", record_json_bytes(record)))
    return archive.build_archive_bytes(entries)


def _create_job(components: PortalComponents, username: str, query: Query) -> dict:
    if query.precompiled_id is not None:
        raise ApiError(400, "malformed_query", "precompiled datasets are fetched directly, not via jobs")
    records = components.catalog.list_matches(query)
    if not records:
        raise ApiError(404, "empty_result", "no files match this query")
    try:
        job_id, part_count = components.engine.create_job(
            username, [part_file(r) for r in records]
        )
    except TooManyLiveJobs as exc:
        raise ApiError(429, "too_many_jobs", str(exc)) from exc
    return {"job_id": job_id, "part_count": part_count}


def create_app(components: PortalComponents) -> FastAPI:
    app = FastAPI(title="plantportal gateway", docs_url=None, redoc_url=None, openapi_url=None)
    config = components.config

    @app.exception_handler(ApiError)
    async def _api_error(_request, exc: ApiError):
        headers = {"WWW-Authenticate": "Basic"} if exc.status == 401 else None
        return JSONResponse(
            {"code": exc.code, "message": exc.message}, status_code=exc.status, headers=headers
        )

    @app.exception_handler(Exception)
    async def _unhandled(_request, exc: Exception):
        log.exception("unhandled gateway error: %s", exc)
        return JSONResponse(
            {"code": "internal_error", "message": "internal server error"}, status_code=500
        )

    @app.get("/health")
    async def health():
        return {"status": "ok"}

    @app.post("/api/v1/check")
    async def check(request: Request):
        _authenticate(request, components)
        query = await _read_query(request)
        summary = await run_in_threadpool(_check_summary, components, query)
        return {
            "file_count": summary.file_count,
            "part_count": summary.part_count,
            "total_bytes": summary.total_bytes,
        }

    @app.post("/api/v1/sample")
    async def sample(request: Request):
        _authenticate(request, components)
        query = await _read_query(request)
        if query.precompiled_id is not None:
            raise ApiError(400, "malformed_query", "samples are drawn from filter queries only")
        data = await run_in_threadpool(_build_sample, components, query)
        return Response(
            content=data,
            media_type=TAR_MEDIA_TYPE,
            headers={"content-length": str(len(data))},
        )

    @app.post("/api/v1/jobs")
    async def create_job(request: Request):
        username = _authenticate(request, components)
        query = await _read_query(request)
        return await run_in_threadpool(_create_job, components, username, query)

    @app.get("/api/v1/jobs/{job_id}/parts/{index}/status")
    def part_status(request: Request, job_id: str, index: str):
        username = _authenticate(request, components)
        _job_access(components, username, job_id)
        n = _parse_part_index(index)
        try:
            state = components.engine.part_status(job_id, n)
        except UnknownPart as exc:
            raise ApiError(404, "unknown_part", str(exc)) from exc
        except UnknownJob:
            raise ApiError(404, "unknown_job", f"no live job {job_id!r}") from None
        if state in (PartState.SERVED, PartState.DELETED):
            raise ApiError(410, "part_gone", f"part {n} was already downloaded")
        if state is PartState.FAILED:
            raise ApiError(500, "part_failed", f"part {n} failed to stage")
        return {"ready": state is PartState.READY, "state": state.value}

    @app.get("/api/v1/jobs/{job_id}/parts/{index}")
    def fetch_part(request: Request, job_id: str, index: str):
        username = _authenticate(request, components)
        _job_access(components, username, job_id)
        n = _parse_part_index(index)
        try:
            stream = components.engine.serve_part(job_id, n)
        except UnknownPart as exc:
            raise ApiError(404, "unknown_part", str(exc)) from exc
        except UnknownJob:
            raise ApiError(404, "unknown_job", f"no live job {job_id!r}") from None
        except PartNotReady as exc:
            raise ApiError(409, "not_ready", str(exc)) from exc
        except PartGone as exc:
            raise ApiError(410, "part_gone", str(exc)) from exc
        except PartFailed as exc:
            raise ApiError(500, "part_failed", str(exc)) from exc
        return StreamingResponse(
            stream,
            media_type=TAR_MEDIA_TYPE,
            headers={"content-length": str(stream.content_length)},
        )

    @app.get("/api/v1/precompiled")
    def list_precompiled(request: Request):
        _authenticate(request, components)
        return [
            {
                "id": d.dataset_id,
                "name": d.name,
                "file_count": d.file_count,
                "bytes": d.byte_size,
            }
            for d in components.precompiled.list()
        ]

    @app.get("/api/v1/precompiled/{dataset_id}")
    def fetch_precompiled(request: Request, dataset_id: str):
        _authenticate(request, components)
        try:
            dataset = components.precompiled.get(dataset_id)
        except UnknownDataset:
            raise ApiError(404, "unknown_dataset", f"no precompiled dataset {dataset_id!r}") from None
        return StreamingResponse(
            components.precompiled.stream(dataset_id),
            media_type=TAR_MEDIA_TYPE,
            headers={"content-length": str(dataset.byte_size)},
        )

    if config.ui_dir is not None:
        app.mount("/ui", StaticFiles(directory=config.ui_dir, html=True), name="ui")

    if config.allowed_origin:
        app.add_middleware(
            CORSMiddleware,
            allow_origins=[config.allowed_origin],
            allow_methods=["GET", "POST"],
            allow_headers=["Authorization", "Content-Type"],
        )

    if config.rate_limit_per_sec > 0:
        app.add_middleware(ConnectionRateLimiter, per_sec=config.rate_limit_per_sec)

    return app
