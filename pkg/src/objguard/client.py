"""Small HTTP client for the gateway, used by the CLI and the benchmarks."""

from __future__ import annotations

import http.client
import json
import time
from dataclasses import dataclass
from typing import Any, BinaryIO, Callable, Iterable, Iterator
from urllib.parse import quote, urlsplit

from objguard.errors import HttpError, TargetUnreachable

READ_CHUNK = 64 * 1024


@dataclass
class Download:
    status: int
    body: bytes | None
    size: int
    ttfb: float
    elapsed: float
    headers: dict[str, str]


def _object_url(path: str) -> str:
    segments = [s for s in path.strip("/").split("/") if s]
    if segments and segments[0] == "v1":
        segments = segments[1:]
    return "/v1/" + "/".join(quote(s) for s in segments)


def _body_iter(body: bytes | BinaryIO | Iterable[bytes]) -> Iterator[bytes]:
    if isinstance(body, (bytes, bytearray)):
        for i in range(0, len(body), READ_CHUNK):
            yield bytes(body[i : i + READ_CHUNK])
        return
    read = getattr(body, "read", None)
    if read is not None:
        while True:
            chunk = read(READ_CHUNK)
            if not chunk:
                return
            yield chunk
    else:
        yield from body


class GatewayClient:
    """One keep-alive connection to the gateway (not thread-safe)."""

    def __init__(self, url: str, token: str | None = None, timeout: float = 60.0) -> None:
        parts = urlsplit(url)
        if parts.scheme not in ("http", "https") or not parts.netloc:
            raise ValueError(f"gateway URL must be http(s)://host:port, got {url!r}")
        self.scheme = parts.scheme
        self.netloc = parts.netloc
        self.token = token
        self.timeout = timeout
        self._conn: http.client.HTTPConnection | None = None

    def close(self) -> None:
        if self._conn is not None:
            self._conn.close()
            self._conn = None

    def __enter__(self) -> "GatewayClient":
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()

    def _connection(self) -> http.client.HTTPConnection:
        if self._conn is None:
            cls = http.client.HTTPSConnection if self.scheme == "https" else http.client.HTTPConnection
            self._conn = cls(self.netloc, timeout=self.timeout)
        return self._conn

    def _send(self, method: str, url: str, body: Any = None, headers: dict[str, str] | None = None) -> http.client.HTTPResponse:
        hdrs = dict(headers or {})
        if self.token is not None:
            hdrs["X-Auth-Token"] = self.token
        if body is not None and not isinstance(body, (bytes, bytearray)):
            hdrs["Transfer-Encoding"] = "chunked"
            body = _body_iter(body)
        for attempt in (0, 1):
            conn = self._connection()
            try:
                conn.request(method, url, body=body, headers=hdrs, encode_chunked="Transfer-Encoding" in hdrs)
                return conn.getresponse()
            except ConnectionRefusedError as exc:
                self.close()
                raise TargetUnreachable(f"{self.netloc}: {exc}") from exc
            except (http.client.RemoteDisconnected, BrokenPipeError, ConnectionResetError) as exc:
                # a stale keep-alive connection gets one retry with a fresh socket
                self.close()
                if attempt or not isinstance(body, (bytes, bytearray, type(None))):
                    raise TargetUnreachable(f"{self.netloc}: {exc}") from exc
            except OSError as exc:
                self.close()
                raise TargetUnreachable(f"{self.netloc}: {exc}") from exc
        raise AssertionError("unreachable")

    def request(self, method: str, url: str, body: Any = None, headers: dict[str, str] | None = None) -> tuple[int, bytes, dict[str, str]]:
        resp = self._send(method, url, body, headers)
        data = resp.read()
        if resp.will_close:
            self.close()
        return resp.status, data, dict(resp.getheaders())

    def _checked(self, method: str, url: str, body: Any = None, ok: tuple[int, ...] = (200,), headers=None) -> bytes:
        status, data, _ = self.request(method, url, body, headers)
        if status not in ok:
            try:
                message = json.loads(data)["error"]
            except (ValueError, KeyError, TypeError):
                message = data.decode("utf-8", "replace")
            raise HttpError(status, message)
        return data

    # -- objects -------------------------------------------------------------

    def get_object(
        self,
        path: str,
        headers: dict[str, str] | None = None,
        keep_body: bool = True,
        throttle: Callable[[int], None] | None = None,
    ) -> Download:
        """Fetch a view. ``throttle(n)`` is called before each chunk is consumed."""
        start = time.perf_counter()
        resp = self._send("GET", _object_url(path), headers=headers)
        if resp.status != 200:
            data = resp.read()
            if resp.will_close:
                self.close()
            try:
                message = json.loads(data)["error"]
            except (ValueError, KeyError, TypeError):
                message = data.decode("utf-8", "replace")
            raise HttpError(resp.status, message)
        parts: list[bytes] = []
        size = 0
        ttfb = None
        try:
            while True:
                chunk = resp.read1(READ_CHUNK)
                if not chunk:
                    break
                if ttfb is None:
                    ttfb = time.perf_counter() - start
                if throttle is not None:
                    throttle(len(chunk))
                size += len(chunk)
                if keep_body:
                    parts.append(chunk)
        except http.client.IncompleteRead as exc:
            self.close()
            raise HttpError(502, f"view aborted after {size} bytes") from exc
        elapsed = time.perf_counter() - start
        if resp.will_close:
            self.close()
        return Download(200, b"".join(parts) if keep_body else None, size, ttfb if ttfb is not None else elapsed, elapsed, dict(resp.getheaders()))

    def put_object(self, path: str, body: bytes | BinaryIO | Iterable[bytes]) -> dict:
        return json.loads(self._checked("PUT", _object_url(path), body, ok=(201,)))

    # -- policies ------------------------------------------------------------

    def put_policy(self, text: bytes | str) -> dict:
        data = text.encode() if isinstance(text, str) else text
        return json.loads(self._checked("PUT", "/v1/policies", data, ok=(201,)))

    def get_policy(self, policy_id: str) -> str:
        return self._checked("GET", "/v1/policies/" + quote(policy_id)).decode()

    def delete_policy(self, policy_id: str) -> None:
        self._checked("DELETE", "/v1/policies/" + quote(policy_id), ok=(204,))

    def list_policies(self) -> list[str]:
        return json.loads(self._checked("GET", "/v1/policies"))["policies"]

    def whoami(self) -> str:
        return json.loads(self._checked("GET", "/v1/whoami"))["user"]

    # -- metadata ------------------------------------------------------------

    def put_meta(self, key: str, value: bytes | str) -> None:
        data = value.encode() if isinstance(value, str) else value
        self._checked("PUT", "/v1/meta/" + quote(key), data, ok=(201,))

    def get_meta(self, key: str) -> bytes:
        return self._checked("GET", "/v1/meta/" + quote(key))


__all__ = ["Download", "GatewayClient"]
