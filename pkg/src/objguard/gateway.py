"""HTTP gateway: object reads through the policy engine, object writes, policy CRUD.

Routes (all need ``X-Auth-Token``)::

    GET    /v1/{account}/{container}/{object}   transformed view (chunked)
    PUT    /v1/{account}/{container}/{object}   store bytes verbatim
    GET    /v1/policies                         list policy ids (JSON)
    PUT    /v1/policies[/{id}]                  compile and store a policy
    GET    /v1/policies/{id}                    the original policy document
    DELETE /v1/policies/{id}
    GET    /v1/meta/{key}                       read a metadata value
    PUT    /v1/meta/{key}                       publish a key or set a label
    GET    /v1/whoami                           the caller's user id

Views are never written back to the backend.

The config file is JSON with optional fields ``listen`` ("host:port"),
``backend_root``, ``backend_endpoint``, ``backend_token``, ``tokens`` (path
to a JSON token table), ``metadata`` (snapshot path), ``cache_capacity``,
``plaintext_bound`` and ``test_mode``. Token tables map a bearer token to a
user id string or to ``{"user": ..., "admin": true}``.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Iterator
from urllib.parse import unquote, urlsplit

from objguard.backend import backend_from_config
from objguard.crypto.hom import DEFAULT_BOUND
from objguard.engine import (
    DEFAULT_CACHE_CAPACITY,
    INDEX_PREFIX,
    LABEL_PREFIX,
    POLICY_PREFIX,
    EnforcementRequest,
    MetadataStore,
    PolicyCache,
    delete_policy,
    enforce_get,
    get_policy_source,
    list_policies,
    put_policy,
)
from objguard.errors import (
    AccessDenied,
    BackendError,
    KeyNotFound,
    ObjectNotFound,
    PolicyError,
    StorageFull,
)
from objguard.policy import ObjectPath, parse_policy

logger = logging.getLogger(__name__)

HEADER_AUTH = "X-Auth-Token"
HEADER_CLOCK = "X-Test-Clock"
BODY_CHUNK = 64 * 1024
DRAIN_LIMIT = 1024 * 1024


@dataclass
class Principal:
    user: str
    admin: bool = False


@dataclass
class GatewayConfig:
    listen: str = "127.0.0.1:8080"
    backend_root: str | None = None
    backend_endpoint: str | None = None
    backend_token: str | None = None
    tokens: str | dict | None = None
    metadata: str | None = None
    cache_capacity: int = DEFAULT_CACHE_CAPACITY
    plaintext_bound: int = DEFAULT_BOUND
    test_mode: bool = False

    @classmethod
    def load(cls, path: str, **overrides: Any) -> "GatewayConfig":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        raw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**raw)

    @property
    def address(self) -> tuple[str, int]:
        host, _, port = self.listen.rpartition(":")
        return host or "127.0.0.1", int(port)


def load_token_table(spec: str | dict | None) -> dict[str, Principal]:
    if spec is None:
        return {}
    if isinstance(spec, str):
        with open(spec, encoding="utf-8") as fh:
            spec = json.load(fh)
    table: dict[str, Principal] = {}
    for token, entry in spec.items():
        if isinstance(entry, str):
            table[token] = Principal(entry)
        else:
            table[token] = Principal(entry["user"], bool(entry.get("admin", False)))
    return table


@dataclass
class GatewayState:
    store: MetadataStore
    cache: PolicyCache
    backend: Any
    tokens: dict[str, Principal]
    config: GatewayConfig = field(default_factory=GatewayConfig)


def _chunked(chunks: Iterator[bytes]) -> Iterator[bytes]:
    for chunk in chunks:
        if chunk:
            yield b"%x\r\n%s\r\n" % (len(chunk), chunk)
    yield b"0\r\n\r\n"


class GatewayHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    # small responses otherwise stall on delayed ACKs
    disable_nagle_algorithm = True
    server_version = "objguard"
    state: GatewayState  # set on the per-server subclass

    def log_message(self, fmt: str, *args: Any) -> None:
        logger.debug("%s " + fmt, self.address_string(), *args)

    # -- plumbing ------------------------------------------------------------

    def _send(self, status: int, body: bytes = b"", ctype: str = "text/plain; charset=utf-8", headers: dict | None = None) -> None:
        self.send_response(status)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        for k, v in (headers or {}).items():
            self.send_header(k, v)
        self.end_headers()
        if body and self.command != "HEAD":
            self.wfile.write(body)

    def _error(self, status: int, message: str) -> None:
        self._send(status, json.dumps({"error": message}).encode(), "application/json")

    def _json(self, status: int, doc: Any) -> None:
        self._send(status, json.dumps(doc).encode(), "application/json")

    def _body_chunks(self) -> Iterator[bytes]:
        """Request body as a stream, for both Content-Length and chunked uploads."""
        if self.headers.get("Transfer-Encoding", "").lower() == "chunked":
            while True:
                line = self.rfile.readline()
                size = int(line.split(b";")[0].strip() or b"0", 16)
                if size == 0:
                    while self.rfile.readline() not in (b"\r\n", b"\n", b""):
                        pass
                    return
                remaining = size
                while remaining:
                    part = self.rfile.read(min(remaining, BODY_CHUNK))
                    if not part:
                        raise ConnectionError("client closed mid-body")
                    remaining -= len(part)
                    yield part
                self.rfile.readline()
        else:
            remaining = int(self.headers.get("Content-Length") or 0)
            while remaining:
                part = self.rfile.read(min(remaining, BODY_CHUNK))
                if not part:
                    raise ConnectionError("client closed mid-body")
                remaining -= len(part)
                yield part

    def _body(self) -> bytes:
        return b"".join(self._body_chunks())

    def _discard_small_body(self) -> None:
        """Read up to DRAIN_LIMIT body bytes so the client sees the reply instead of a reset."""
        length = self.headers.get("Content-Length")
        chunked = "chunked" in self.headers.get("Transfer-Encoding", "").lower()
        if chunked or (length and length.isdigit() and int(length) <= DRAIN_LIMIT):
            seen = 0
            try:
                for part in self._body_chunks():
                    seen += len(part)
                    if seen > DRAIN_LIMIT:
                        break
                else:
                    return
            except (ConnectionError, OSError, ValueError):
                pass
        self.close_connection = True

    def _principal(self) -> Principal | None:
        token = self.headers.get(HEADER_AUTH)
        principal = self.state.tokens.get(token) if token else None
        if principal is None:
            self._discard_small_body()
            self._error(HTTPStatus.UNAUTHORIZED, "missing or unknown auth token")
        return principal

    def _route(self) -> list[str]:
        path = urlsplit(self.path).path
        parts = [unquote(p) for p in path.split("/")[1:]]
        if not parts or parts[0] != "v1":
            return []
        return parts[1:]

    # -- dispatch ------------------------------------------------------------

    def do_GET(self) -> None:
        self._dispatch("GET")

    def do_PUT(self) -> None:
        self._dispatch("PUT")

    def do_DELETE(self) -> None:
        self._dispatch("DELETE")

    def _dispatch(self, method: str) -> None:
        principal = self._principal()
        if principal is None:
            return
        route = self._route()
        try:
            if route == ["whoami"] and method == "GET":
                self._json(HTTPStatus.OK, {"user": principal.user, "admin": principal.admin})
            elif route[:1] == ["policies"]:
                self._policies(method, route[1:], principal)
            elif route[:1] == ["meta"] and len(route) > 1:
                self._meta(method, "/".join(route[1:]), principal)
            elif len(route) >= 3:
                self._object(method, route, principal)
            else:
                if method == "PUT":
                    for _ in self._body_chunks():
                        pass
                self._error(HTTPStatus.BAD_REQUEST, "object paths need /v1/<account>/<container>/<object>")
        except (ConnectionError, BrokenPipeError):
            self.close_connection = True

    # -- objects -------------------------------------------------------------

    def _object(self, method: str, route: list[str], principal: Principal) -> None:
        try:
            path = ObjectPath(route[0], route[1], "/".join(route[2:]))
            if not all((path.account, path.container, path.object)):
                raise ValueError("empty segment")
        except ValueError:
            if method == "PUT":
                for _ in self._body_chunks():
                    pass
            self._error(HTTPStatus.BAD_REQUEST, "object paths need 3 non-empty segments")
            return
        if method == "PUT":
            self._put_object(path)
        elif method == "GET":
            self._get_object(path, principal)
        else:
            self._error(HTTPStatus.METHOD_NOT_ALLOWED, f"{method} not supported on objects")

    def _put_object(self, path: ObjectPath) -> None:
        try:
            size = self.state.backend.write(path, self._body_chunks())
        except StorageFull as exc:
            self.close_connection = True
            self._error(HTTPStatus.INSUFFICIENT_STORAGE, str(exc))
            return
        except BackendError as exc:
            self.close_connection = True
            self._error(HTTPStatus.BAD_GATEWAY, str(exc))
            return
        self._json(HTTPStatus.CREATED, {"object": str(path), "bytes": size})

    def _clock(self) -> datetime | None:
        if not self.state.config.test_mode:
            return None
        raw = self.headers.get(HEADER_CLOCK)
        if not raw:
            return None
        clock = datetime.fromisoformat(raw)
        return clock if clock.tzinfo else clock.replace(tzinfo=timezone.utc)

    def _get_object(self, path: ObjectPath, principal: Principal) -> None:
        req = EnforcementRequest(
            path=path,
            user_id=principal.user,
            headers={k: v for k, v in self.headers.items() if k.lower() != HEADER_AUTH.lower()},
            clock=self._clock(),
            auth_token=self.headers.get(HEADER_AUTH),
        )
        try:
            view = enforce_get(req, self.state.backend, self.state.store, self.state.cache, self.state.config.test_mode)
            stream = iter(view.stream)
            # the first chunk is pulled before any header so early failures still map to a status
            first = next(stream, b"")
        except AccessDenied as exc:
            self._error(HTTPStatus.FORBIDDEN, str(exc))
            return
        except ObjectNotFound:
            self._error(HTTPStatus.NOT_FOUND, f"no object {path}")
            return
        except BackendError as exc:
            self._error(HTTPStatus.BAD_GATEWAY, str(exc))
            return
        self.send_response(HTTPStatus.OK)
        self.send_header("Content-Type", "application/octet-stream")
        self.send_header("Transfer-Encoding", "chunked")
        if view.stats.policy_id:
            self.send_header("X-Policy-Id", view.stats.policy_id)
        self.end_headers()
        self.wfile.write(b"%x\r\n%s\r\n" % (len(first), first) if first else b"")
        try:
            for piece in _chunked(stream):
                self.wfile.write(piece)
        except (AccessDenied, ObjectNotFound, BackendError) as exc:
            # headers are out; dropping the connection without the final chunk signals failure
            logger.warning("view of %s aborted: %s", path, exc)
            self.close_connection = True

    # -- policies ------------------------------------------------------------

    def _policies(self, method: str, rest: list[str], principal: Principal) -> None:
        state = self.state
        if method == "PUT":
            body = self._body()
            try:
                doc_id = parse_policy(body).id
                if rest and "/".join(rest) != doc_id:
                    self._error(HTTPStatus.BAD_REQUEST, f"URL id {'/'.join(rest)!r} differs from document Id {doc_id!r}")
                    return
                policy = put_policy(state.store, state.cache, body)
            except PolicyError as exc:
                self._error(HTTPStatus.BAD_REQUEST, f"{type(exc).__name__}: {exc}")
                return
            logger.info("%s stored policy %s for %s", principal.user, policy.id, policy.object_pattern)
            self._json(HTTPStatus.CREATED, {"id": policy.id, "object": str(policy.object_pattern)})
            return
        if method == "GET" and not rest:
            self._json(HTTPStatus.OK, {"policies": list_policies(state.store)})
            return
        if not rest:
            self._error(HTTPStatus.METHOD_NOT_ALLOWED, f"{method} needs a policy id")
            return
        policy_id = "/".join(rest)
        try:
            if method == "GET":
                self._send(HTTPStatus.OK, get_policy_source(state.store, policy_id).encode(), "application/json")
            elif method == "DELETE":
                delete_policy(state.store, state.cache, policy_id)
                self.send_response(HTTPStatus.NO_CONTENT)
                self.send_header("Content-Length", "0")
                self.end_headers()
            else:
                self._error(HTTPStatus.METHOD_NOT_ALLOWED, method)
        except KeyNotFound:
            self._error(HTTPStatus.NOT_FOUND, f"no policy {policy_id}")
        except AccessDenied as exc:
            self._error(HTTPStatus.INTERNAL_SERVER_ERROR, str(exc))

    # -- metadata ------------------------------------------------------------

    def _may_write_meta(self, key: str, principal: Principal) -> bool:
        if key.startswith((POLICY_PREFIX, INDEX_PREFIX)):
            return False
        if principal.admin:
            return True
        own = (f"keys/{principal.user}/", f"{principal.user}/keys/")
        return key.startswith(own)

    def _meta(self, method: str, key: str, principal: Principal) -> None:
        store = self.state.store
        if method == "PUT":
            body = self._body()
            if not self._may_write_meta(key, principal):
                self._error(HTTPStatus.FORBIDDEN, f"{principal.user} may not write {key}")
                return
            store.put(key, body)
            self._json(HTTPStatus.CREATED, {"key": key, "bytes": len(body)})
        elif method == "GET":
            if key.startswith(LABEL_PREFIX) and not principal.admin and key != LABEL_PREFIX + principal.user:
                self._error(HTTPStatus.FORBIDDEN, "labels of other users are private")
                return
            try:
                self._send(HTTPStatus.OK, store.get(key), "application/octet-stream")
            except KeyNotFound:
                self._error(HTTPStatus.NOT_FOUND, f"no metadata key {key}")
        elif method == "DELETE":
            if not self._may_write_meta(key, principal):
                self._error(HTTPStatus.FORBIDDEN, f"{principal.user} may not delete {key}")
                return
            store.delete(key)
            self.send_response(HTTPStatus.NO_CONTENT)
            self.send_header("Content-Length", "0")
            self.end_headers()


class GatewayServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, state: GatewayState) -> None:
        handler = type("BoundGatewayHandler", (GatewayHandler,), {"state": state})
        super().__init__(state.config.address, handler)
        self.state = state
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"

    def start_background(self) -> "GatewayServer":
        self._thread = threading.Thread(target=self.serve_forever, name="gateway", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)


def make_server(config: GatewayConfig, store: MetadataStore | None = None, backend: Any = None) -> GatewayServer:
    state = GatewayState(
        store=store if store is not None else MetadataStore(config.metadata),
        cache=PolicyCache(config.cache_capacity),
        backend=backend if backend is not None else backend_from_config(config.backend_root, config.backend_endpoint, config.backend_token),
        tokens=load_token_table(config.tokens),
        config=config,
    )
    server = GatewayServer(state)
    logger.info("gateway listening on %s (%s)", server.url, json.dumps({k: v for k, v in asdict(config).items() if k != "tokens"}))
    return server


__all__ = [
    "GatewayConfig",
    "GatewayHandler",
    "GatewayServer",
    "GatewayState",
    "HEADER_AUTH",
    "HEADER_CLOCK",
    "Principal",
    "load_token_table",
    "make_server",
]
