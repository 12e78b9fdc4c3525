"""Credential handling and the development TLS certificate.

Passwords are stored as salted PBKDF2 hashes and verified with constant-time
comparison. Verification results are cached on a digest of the attempt so the
per-request cost of HTTP Basic does not dominate polling traffic.
"""

from __future__ import annotations

import base64
import binascii
import datetime
import hashlib
import hmac
import ipaddress
import secrets
import threading
from pathlib import Path
from typing import Iterable

PBKDF2_ITERATIONS = 100_000
_SCHEME = "pbkdf2_sha256"


def hash_password(password: str, *, iterations: int = PBKDF2_ITERATIONS) -> str:
    salt = secrets.token_bytes(16)
    digest = hashlib.pbkdf2_hmac("sha256", password.encode(), salt, iterations)
    return f"{_SCHEME}${iterations}${salt.hex()}${digest.hex()}"


def verify_password(password: str, stored: str) -> bool:
    try:
        scheme, iterations, salt_hex, digest_hex = stored.split("$")
        if scheme != _SCHEME:
            return False
        salt = bytes.fromhex(salt_hex)
        expected = bytes.fromhex(digest_hex)
        iterations = int(iterations)
    except (ValueError, TypeError):
        return False
    candidate = hashlib.pbkdf2_hmac("sha256", password.encode(), salt, iterations)
    return hmac.compare_digest(candidate, expected)


# Hash for the dummy verification run against unknown usernames, so response
# timing does not reveal whether an account exists.
_DUMMY_HASH = hash_password("terra-firma-placeholder")


class UserStore:
    def __init__(self, entries: Iterable[tuple[str, str]]):
        self._hashes = {username: stored for username, stored in entries}
        self._cache: dict[bytes, bool] = {}
        self._lock = threading.Lock()

    def authenticate(self, username: str, password: str) -> bool:
        stored = self._hashes.get(username)
        cache_key = hashlib.sha256(f"{username}\x00{password}".encode()).digest()
        with self._lock:
            cached = self._cache.get(cache_key)
        if cached is not None:
            return cached
        ok = verify_password(password, stored if stored is not None else _DUMMY_HASH)
        ok = ok and stored is not None
        with self._lock:
            if len(self._cache) > 1024:
                self._cache.clear()
            self._cache[cache_key] = ok
        return ok


def parse_basic_auth(header_value: str | None) -> tuple[str, str] | None:
    if not header_value or not header_value.startswith("Basic "):
        return None
    try:
        decoded = base64.b64decode(header_value[6:], validate=True).decode()
        username, _, password = decoded.partition(":")
    except (binascii.Error, UnicodeDecodeError):
        return None
    if not username:
        return None
    return username, password


def ensure_self_signed_cert(
    directory: str | Path, hostnames: Iterable[str] = ("localhost", "127.0.0.1")
) -> tuple[Path, Path]:
    """Create (or reuse) a self-signed development certificate pair.

    The certificate is its own trust anchor: clients point their tls_trust at
    the cert file. Not for production; a real chain goes in via explicit
    cert/key config paths.
    """
    from cryptography import x509
    from cryptography.hazmat.primitives import hashes, serialization
    from cryptography.hazmat.primitives.asymmetric import rsa
    from cryptography.x509.oid import NameOID

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cert_path = directory / "gateway-cert.pem"
    key_path = directory / "gateway-key.pem"
    if cert_path.exists() and key_path.exists():
        return cert_path, key_path

    key = rsa.generate_private_key(public_exponent=65537, key_size=2048)
    name = x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, "plantportal-dev")])
    alt_names: list[x509.GeneralName] = []
    for host in hostnames:
        try:
            alt_names.append(x509.IPAddress(ipaddress.ip_address(host)))
        except ValueError:
            alt_names.append(x509.DNSName(host))
    now = datetime.datetime.now(datetime.timezone.utc)
    cert = (
        x509.CertificateBuilder()
        .subject_name(name)
        .issuer_name(name)
        .public_key(key.public_key())
        .serial_number(x509.random_serial_number())
        .not_valid_before(now - datetime.timedelta(days=1))
        .not_valid_after(now + datetime.timedelta(days=825))
        .add_extension(x509.SubjectAlternativeName(alt_names), critical=False)
        .add_extension(x509.BasicConstraints(ca=True, path_length=None), critical=True)
        .sign(key, hashes.SHA256())
    )
    key_path.write_bytes(
        key.private_bytes(
            serialization.Encoding.PEM,
            serialization.PrivateFormat.TraditionalOpenSSL,
            serialization.NoEncryption(),
        )
    )
    key_path.chmod(0o600)
    cert_path.write_bytes(cert.public_bytes(serialization.Encoding.PEM))
    return cert_path, key_path
