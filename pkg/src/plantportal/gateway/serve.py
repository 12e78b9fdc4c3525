"""Run the gateway under uvicorn with TLS, in-process or blocking."""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass
from pathlib import Path

import uvicorn

from .app import PortalComponents, build_components, create_app
from .config import GatewayConfig
from .security import ensure_self_signed_cert


class GatewayStartupError(Exception):
    pass


def resolve_tls(config: GatewayConfig) -> tuple[Path, Path]:
    tls = config.tls
    if tls.cert_path is not None and tls.key_path is not None:
        return tls.cert_path, tls.key_path
    hosts = {"localhost", "127.0.0.1", config.host}
    return ensure_self_signed_cert(tls.self_signed_dir, sorted(hosts))


@dataclass
class GatewayHandle:
    """A gateway running on a background thread, for tests and the bench harness."""

    base_url: str
    cert_path: Path
    components: PortalComponents
    _server: uvicorn.Server
    _thread: threading.Thread

    def stop(self) -> None:
        self._server.should_exit = True
        self._thread.join(timeout=15)
        self.components.close()

    def __enter__(self) -> "GatewayHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.stop()


def _make_server(
    config: GatewayConfig, components: PortalComponents, port: int | None
) -> tuple[uvicorn.Server, Path]:
    cert_path, key_path = resolve_tls(config)
    uv_config = uvicorn.Config(
        create_app(components),
        host=config.host,
        port=config.port if port is None else port,
        ssl_certfile=str(cert_path),
        ssl_keyfile=str(key_path),
        log_level="warning",
    )
    return uvicorn.Server(uv_config), cert_path


def run_gateway(
    config: GatewayConfig,
    *,
    port: int | None = 0,
    store_wrapper=None,
    startup_timeout: float = 30.0,
) -> GatewayHandle:
    """Start the gateway on a daemon thread; port 0 picks a free port."""
    components = build_components(config, store_wrapper=store_wrapper)
    server, cert_path = _make_server(config, components, port)
    thread = threading.Thread(target=server.run, daemon=True, name="gateway")
    thread.start()
    deadline = time.monotonic() + startup_timeout
    while not server.started:
        if not thread.is_alive() or time.monotonic() > deadline:
            components.close()
            raise GatewayStartupError("gateway failed to start")
        time.sleep(0.02)
    bound_port = server.servers[0].sockets[0].getsockname()[1]
    return GatewayHandle(
        base_url=f"https://{config.host}:{bound_port}",
        cert_path=cert_path,
        components=components,
        _server=server,
        _thread=thread,
    )


def serve_forever(config: GatewayConfig) -> None:
    components = build_components(config)
    server, _ = _make_server(config, components, None)
    try:
        server.run()
    finally:
        components.close()
