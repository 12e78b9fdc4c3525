from __future__ import annotations

import hashlib
import json
import threading

import httpx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plantportal.archive import build_archive_bytes
from plantportal.catalog import FileType, MalformedQuery, Query, matches, record_from_json
from plantportal.clientcore import (
    BackoffPolicy,
    ClientConfig,
    ClientConfigError,
    ConnectionFailed,
    EmptyResult,
    PortalClient,
    TlsError,
)
from plantportal.jobengine import PartitionPolicy

from .faults import FaultyStore


class TestBackoffPolicy:
    def test_default_sequence(self):
        policy = BackoffPolicy()
        assert [policy.delay_ms(n) for n in range(5)] == [200, 320, 512, 819, 1311]

    def test_cap_reached_and_held(self):
        policy = BackoffPolicy()
        delays = [policy.delay_ms(n) for n in range(30)]
        assert max(delays) == 5000
        assert delays[-1] == delays[-2] == 5000

    @settings(max_examples=60, deadline=None)
    @given(
        initial=st.integers(1, 2000),
        factor=st.floats(1.01, 4.0),
        cap_mult=st.integers(1, 50),
        n=st.integers(0, 40),
    )
    def test_monotone_until_cap(self, initial, factor, cap_mult, n):
        policy = BackoffPolicy(initial_ms=initial, factor=factor, cap_ms=initial * cap_mult)
        # The law itself increases strictly until the cap; the sleeps quantize
        # to whole milliseconds and so are merely non-decreasing.
        raw = lambda k: min(initial * factor**k, float(policy.cap_ms))
        if raw(n) < policy.cap_ms:
            assert raw(n + 1) > raw(n)
        assert policy.delay_ms(n + 1) >= policy.delay_ms(n)
        assert policy.delay_ms(n) <= policy.cap_ms

    def test_invalid_parameters(self):
        with pytest.raises(ClientConfigError):
            BackoffPolicy(initial_ms=0)
        with pytest.raises(ClientConfigError):
            BackoffPolicy(factor=1.0)
        with pytest.raises(ClientConfigError):
            BackoffPolicy(cap_ms=100)


class TestClientConfig:
    def test_file_round_trip(self, tmp_path):
        config = ClientConfig(
            server_url="https://example.test:8443",
            username="u",
            password="p",
            sample_path=tmp_path / "s",
            download_path=tmp_path / "d",
            backoff=BackoffPolicy(initial_ms=100, factor=2.0, cap_ms=800),
            max_tries=7,
            tls_trust="system",
        )
        path = config.save(tmp_path / "cfg.json")
        assert ClientConfig.load(path) == config
        assert (path.stat().st_mode & 0o777) == 0o600

    def test_config_env_var_points_at_file(self, tmp_path, monkeypatch):
        path = tmp_path / "via-env.json"
        ClientConfig(server_url="https://x", username="a", password="b").save(path)
        monkeypatch.setenv("TBC_CONFIG", str(path))
        assert ClientConfig.load().server_url == "https://x"

    def test_server_url_env_override(self, tmp_path, monkeypatch):
        path = tmp_path / "cfg.json"
        ClientConfig(server_url="https://original", username="a", password="b").save(path)
        monkeypatch.setenv("TBC_SERVER_URL", "https://override")
        assert ClientConfig.load(path).server_url == "https://override"

    def test_missing_config_is_a_clear_error(self, tmp_path):
        with pytest.raises(ClientConfigError):
            ClientConfig.load(tmp_path / "nope.json")

    def test_https_enforced(self, tmp_path):
        config = ClientConfig(server_url="http://plain.test", username="u", password="p")
        with pytest.raises(TlsError):
            PortalClient(config)


# --- scripted-transport tests (fake clock) ------------------------------------


class ScriptedGateway:
    """httpx.MockTransport handler scripted per part-endpoint interaction."""

    def __init__(
        self,
        status_script,
        archive: bytes | None = None,
        fetch_failures: int = 0,
        part_count: int = 1,
        dead_from_part: int | None = None,
    ):
        self.status_script = list(status_script)  # "staging" | "ready" entries
        self.archive = archive if archive is not None else build_archive_bytes([("rec-0.png", b"data")])
        self.fetch_failures = fetch_failures
        self.part_count = part_count
        self.dead_from_part = dead_from_part  # simulate a dead link from this part on
        self.status_requests = 0
        self.fetch_requests = 0

    def __call__(self, request: httpx.Request) -> httpx.Response:
        path = request.url.path
        if path.endswith("/jobs"):
            return httpx.Response(200, json={"job_id": "scripted-job-id-0123456789", "part_count": self.part_count})
        if self.dead_from_part is not None:
            index = int(path.removesuffix("/status").rsplit("/", 1)[-1])
            if index >= self.dead_from_part:
                raise httpx.ConnectError("connection refused", request=request)
        if path.endswith("/status"):
            self.status_requests += 1
            state = self.status_script.pop(0) if self.status_script else "ready"
            return httpx.Response(200, json={"ready": state == "ready", "state": state})
        self.fetch_requests += 1
        if self.fetch_failures > 0:
            self.fetch_failures -= 1
            raise httpx.ReadError("connection dropped mid-stream", request=request)
        return httpx.Response(
            200, content=self.archive, headers={"content-type": "application/x-tar"}
        )


def scripted_client(tmp_path, script, **config_overrides) -> tuple[PortalClient, ScriptedGateway, list]:
    gateway = ScriptedGateway(**script)
    sleeps: list[float] = []
    config = ClientConfig(
        server_url="https://portal.test",
        username="alice",
        password="pw",
        sample_path=tmp_path / "samples",
        download_path=tmp_path / "downloads",
        **config_overrides,
    )
    client = PortalClient(config, sleep=sleeps.append, transport=httpx.MockTransport(gateway))
    return client, gateway, sleeps


class TestGetFilesBackoffLaw:
    def test_never_ready_max_tries_five(self, tmp_path):
        client, gateway, sleeps = scripted_client(
            tmp_path, {"status_script": ["staging"] * 99}, max_tries=5
        )
        outcome = client.get_files("job", 0)
        assert not outcome.completed
        assert outcome.cause == "max_tries"
        assert gateway.status_requests == 5
        assert sleeps == [0.2, 0.32, 0.512, 0.819, 1.311]

    def test_ready_at_first_poll_sleeps_once(self, tmp_path):
        client, gateway, sleeps = scripted_client(tmp_path, {"status_script": ["ready"]})
        outcome = client.get_files("job", 0)
        assert outcome.completed
        assert gateway.status_requests == 1
        assert sleeps == [0.2]

    def test_positive_status_resets_backoff(self, tmp_path):
        # Two negative polls, then ready but the fetch drops; the re-poll must
        # restart at delay(0).
        client, gateway, sleeps = scripted_client(
            tmp_path,
            {"status_script": ["staging", "staging", "ready", "ready"], "fetch_failures": 1},
        )
        outcome = client.get_files("job", 0)
        assert outcome.completed
        assert gateway.fetch_requests == 2
        assert sleeps == [0.2, 0.32, 0.512, 0.2]

    def test_gone_part_abandoned_with_distinct_cause(self, tmp_path):
        def handler(request):
            return httpx.Response(410, json={"code": "part_gone", "message": "consumed"})

        config = ClientConfig(
            server_url="https://portal.test",
            username="u",
            password="p",
            download_path=tmp_path,
            sample_path=tmp_path,
        )
        client = PortalClient(config, sleep=lambda s: None, transport=httpx.MockTransport(handler))
        outcome = client.get_files("job", 0)
        assert not outcome.completed
        assert outcome.cause == "gone"

    def test_corrupt_archive_abandons_without_partial_files(self, tmp_path):
        client, gateway, sleeps = scripted_client(
            tmp_path,
            {"status_script": ["ready"] * 99, "archive": b"certainly not a tar stream"},
            max_tries=3,
        )
        outcome = client.get_files("job", 0)
        assert not outcome.completed
        assert outcome.cause == "extraction"
        downloads = tmp_path / "downloads"
        assert [p for p in downloads.rglob("*") if p.is_file()] == []

    def test_connection_death_mid_job_reports_abandoned_remainder(self, tmp_path):
        client, gateway, _sleeps = scripted_client(
            tmp_path,
            {"status_script": ["ready"] * 99, "part_count": 3, "dead_from_part": 1},
        )
        report = client.download(Query())
        assert report.parts_total == 3
        assert report.parts_completed == 1
        assert report.parts_abandoned == [1, 2]
        assert set(report.abandoned_causes.values()) == {"connection_failed"}
        assert report.parts_completed + len(report.parts_abandoned) == report.parts_total

    def test_progress_callback_event_order(self, tmp_path):
        events = []
        gateway = ScriptedGateway(["staging", "ready"])
        config = ClientConfig(
            server_url="https://portal.test",
            username="u",
            password="p",
            download_path=tmp_path / "d",
            sample_path=tmp_path / "s",
        )
        client = PortalClient(
            config,
            sleep=lambda s: None,
            transport=httpx.MockTransport(gateway),
            progress=lambda job, part, event: events.append((part, event)),
        )
        outcome = client.get_files("job", 3)
        assert outcome.completed
        assert events == [(3, "polled"), (3, "polled"), (3, "ready"), (3, "fetched"), (3, "extracted")]


class TestClientSideValidation:
    def test_malformed_query_never_reaches_the_network(self, tmp_path):
        def handler(request):
            raise AssertionError("no request should be sent")

        config = ClientConfig(
            server_url="https://portal.test", username="u", password="p",
            download_path=tmp_path, sample_path=tmp_path,
        )
        client = PortalClient(config, transport=httpx.MockTransport(handler))
        with pytest.raises(MalformedQuery):
            client.check_query(Query(age_min=10, age_max=2))
        with pytest.raises(ClientConfigError):
            client.download(Query(precompiled_id="set-a"))


# --- live end-to-end ----------------------------------------------------------


class TestLiveDownloads:
    def test_three_part_job_round_trip_bytes(self, gateway_factory, client_factory, small_corpus):
        files = [r for r in small_corpus.manifest.records if r.filetype is FileType.SINGLE_PLANT]
        per_part = -(-len(files) // 3)
        handle = gateway_factory(small_corpus, partition=PartitionPolicy(max_part_files=per_part))
        client = client_factory(handle)
        query = Query(filetypes=frozenset({FileType.SINGLE_PLANT}))
        report = client.download(query)
        assert report.parts_total == 3
        assert report.parts_completed == 3
        assert report.parts_abandoned == []
        assert report.files_written == len(files)

        wanted = {
            f"{r.record_id}.png": small_corpus.manifest.hashes[r.record_id] for r in files
        }
        downloads = client.config.download_path
        got = {
            p.name: hashlib.sha256(p.read_bytes()).hexdigest()
            for p in downloads.iterdir()
            if p.is_file()
        }
        assert got == wanted

    def test_empty_query_surfaces_empty_result(self, gateway_factory, client_factory, small_corpus):
        handle = gateway_factory(small_corpus)
        client = client_factory(handle)
        with pytest.raises(EmptyResult):
            client.download(Query(species=("No-Such-Species",)))

    def test_stuck_part_abandoned_others_complete(self, gateway_factory, client_factory, small_corpus):
        # Part 1's staging hangs server-side until the staging timeout fails
        # it; the client abandons exactly that part and completes the rest.
        catalog = small_corpus.load_catalog()
        query = Query(filetypes=frozenset({FileType.ANNOTATED}))
        records = catalog.list_matches(query)
        per_part = -(-len(records) // 3)
        victim = records[per_part].blob_key  # first blob of part 1
        release = threading.Event()
        handle = gateway_factory(
            small_corpus,
            partition=PartitionPolicy(max_part_files=per_part),
            staging_timeout_seconds=1.0,
            store_wrapper=lambda store: FaultyStore(store, hold_keys={victim}, release=release),
        )
        try:
            client = client_factory(handle, max_tries=30)
            report = client.download(query)
            assert report.parts_total == 3
            assert report.parts_abandoned == [1]
            assert report.abandoned_causes[1] in ("max_tries", "part_failed")
            assert report.parts_completed == 2
            names = {p.name for p in client.config.download_path.iterdir()}
            expected = {f"{r.record_id}.png" for r in records}
            missing = expected - names
            held_part = {f"{r.record_id}.png" for r in records[per_part : 2 * per_part]}
            assert missing == held_part
        finally:
            release.set()

    def test_sample_files_satisfy_query_locally(self, gateway_factory, client_factory, small_corpus):
        handle = gateway_factory(small_corpus)
        client = client_factory(handle)
        query = Query(species=("Soybean",), filetypes=frozenset({FileType.SINGLE_PLANT}))
        paths = client.get_sample(query)
        images = [p for p in paths if p.suffix == ".png"]
        sidecars = [p for p in paths if p.suffix == ".json"]
        assert len(images) <= 20
        assert len(images) == len(sidecars)
        for sidecar in sidecars:
            record = record_from_json(json.loads(sidecar.read_text()))
            assert matches(query, record)

    def test_wrong_trust_anchor_is_a_tls_error(self, gateway_factory, client_factory, small_corpus, tmp_path):
        handle = gateway_factory(small_corpus)
        from plantportal.gateway.security import ensure_self_signed_cert

        other_cert, _ = ensure_self_signed_cert(tmp_path / "other-ca")
        client = client_factory(handle, tls_trust_override=str(other_cert))
        with pytest.raises((TlsError, ConnectionFailed)):
            client.health()


def test_health_roundtrip(gateway_factory, client_factory, small_corpus):
    handle = gateway_factory(small_corpus)
    client = client_factory(handle)
    assert client.health() is True
