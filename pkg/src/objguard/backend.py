"""Object backends: where stored objects are read from and written to.

``FileBackend`` keeps ``<root>/<account>/<container>/<object>``.
``HttpBackend`` talks to a remote Swift-style ``/v1/<account>/<container>/<object>``
endpoint with an auth token and has the same semantics.
"""

from __future__ import annotations

import errno
import http.client
import logging
import os
import tempfile
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Iterator
from urllib.parse import quote, urlsplit

from objguard.errors import BackendError, ObjectNotFound, StorageFull
from objguard.policy import ObjectPath

logger = logging.getLogger(__name__)

READ_CHUNK = 64 * 1024


@dataclass(frozen=True)
class ObjectStat:
    size: int
    mtime: float


def _chunks_of(body: bytes | BinaryIO | Iterable[bytes]) -> Iterator[bytes]:
    if isinstance(body, (bytes, bytearray, memoryview)):
        data = bytes(body)
        for i in range(0, len(data), READ_CHUNK):
            yield data[i : i + READ_CHUNK]
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


class FileBackend:
    def __init__(self, root: str | os.PathLike) -> None:
        self.root = os.path.abspath(os.fspath(root))
        os.makedirs(self.root, exist_ok=True)

    def _file(self, path: ObjectPath) -> str:
        parts = (path.account, path.container, path.object)
        if any(p in ("", ".", "..") or "\x00" in p for p in parts) or "/" in path.container or "/" in path.account:
            raise BackendError(f"unsafe object path {path}")
        full = os.path.abspath(os.path.join(self.root, *parts))
        if not full.startswith(self.root + os.sep):
            raise BackendError(f"object path escapes the backend root: {path}")
        return full

    def open(self, path: ObjectPath, chunk_size: int = READ_CHUNK) -> Iterator[bytes]:
        """Chunks of the stored object. Missing objects fail before the first chunk."""
        name = self._file(path)
        try:
            fh = open(name, "rb")
        except FileNotFoundError:
            raise ObjectNotFound(str(path)) from None
        except IsADirectoryError:
            raise ObjectNotFound(str(path)) from None
        except OSError as exc:
            raise BackendError(f"cannot read {path}: {exc}") from exc
        return self._read(fh, chunk_size)

    @staticmethod
    def _read(fh: BinaryIO, chunk_size: int) -> Iterator[bytes]:
        with fh:
            while True:
                chunk = fh.read(chunk_size)
                if not chunk:
                    return
                yield chunk

    def write(self, path: ObjectPath, body: bytes | BinaryIO | Iterable[bytes]) -> int:
        """Store ``body`` verbatim (streamed to a temp file, then renamed)."""
        name = self._file(path)
        os.makedirs(os.path.dirname(name), exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=os.path.dirname(name), prefix=".upload-")
        written = 0
        try:
            with os.fdopen(fd, "wb") as out:
                for chunk in _chunks_of(body):
                    out.write(chunk)
                    written += len(chunk)
            os.replace(tmp, name)
        except OSError as exc:
            if os.path.exists(tmp):
                os.unlink(tmp)
            if exc.errno in (errno.ENOSPC, errno.EDQUOT):
                raise StorageFull(str(exc)) from exc
            raise BackendError(f"cannot write {path}: {exc}") from exc
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return written

    def stat(self, path: ObjectPath) -> ObjectStat:
        try:
            st = os.stat(self._file(path))
        except FileNotFoundError:
            raise ObjectNotFound(str(path)) from None
        return ObjectStat(st.st_size, st.st_mtime)

    def delete(self, path: ObjectPath) -> None:
        try:
            os.unlink(self._file(path))
        except FileNotFoundError:
            raise ObjectNotFound(str(path)) from None


class HttpBackend:
    """Remote Swift/S3-compatible object store reached over plain HTTP(S)."""

    def __init__(self, endpoint: str, token: str | None = None, timeout: float = 30.0) -> None:
        parts = urlsplit(endpoint)
        if parts.scheme not in ("http", "https") or not parts.netloc:
            raise ValueError(f"backend endpoint must be an http(s) URL: {endpoint!r}")
        self.scheme = parts.scheme
        self.netloc = parts.netloc
        self.prefix = parts.path.rstrip("/")
        self.token = token
        self.timeout = timeout

    def _conn(self) -> http.client.HTTPConnection:
        cls = http.client.HTTPSConnection if self.scheme == "https" else http.client.HTTPConnection
        return cls(self.netloc, timeout=self.timeout)

    def _url(self, path: ObjectPath) -> str:
        return f"{self.prefix}/v1/{quote(path.account)}/{quote(path.container)}/{quote(path.object)}"

    def _headers(self) -> dict[str, str]:
        return {"X-Auth-Token": self.token} if self.token else {}

    def _request(self, method: str, path: ObjectPath, body=None, headers=None) -> tuple[http.client.HTTPConnection, http.client.HTTPResponse]:
        conn = self._conn()
        try:
            conn.request(method, self._url(path), body=body, headers={**self._headers(), **(headers or {})})
            resp = conn.getresponse()
        except OSError as exc:
            conn.close()
            raise BackendError(f"{method} {path}: {exc}") from exc
        if resp.status == 404:
            conn.close()
            raise ObjectNotFound(str(path))
        if resp.status == 507:
            conn.close()
            raise StorageFull(str(path))
        if resp.status >= 300:
            conn.close()
            raise BackendError(f"{method} {path}: HTTP {resp.status}")
        return conn, resp

    def open(self, path: ObjectPath, chunk_size: int = READ_CHUNK) -> Iterator[bytes]:
        conn, resp = self._request("GET", path)

        def chunks() -> Iterator[bytes]:
            try:
                while True:
                    chunk = resp.read(chunk_size)
                    if not chunk:
                        return
                    yield chunk
            finally:
                conn.close()

        return chunks()

    def write(self, path: ObjectPath, body: bytes | BinaryIO | Iterable[bytes]) -> int:
        counted = 0

        def counting() -> Iterator[bytes]:
            nonlocal counted
            for chunk in _chunks_of(body):
                counted += len(chunk)
                yield chunk

        conn, resp = self._request("PUT", path, body=counting(), headers={"Transfer-Encoding": "chunked"})
        resp.read()
        conn.close()
        return counted

    def stat(self, path: ObjectPath) -> ObjectStat:
        conn, resp = self._request("HEAD", path)
        size = int(resp.getheader("Content-Length") or 0)
        conn.close()
        return ObjectStat(size, 0.0)

    def delete(self, path: ObjectPath) -> None:
        conn, resp = self._request("DELETE", path)
        resp.read()
        conn.close()


def backend_from_config(root: str | None = None, endpoint: str | None = None, token: str | None = None):
    if endpoint:
        return HttpBackend(endpoint, token)
    if not root:
        raise ValueError("a backend root directory or endpoint is required")
    return FileBackend(root)


__all__ = ["FileBackend", "HttpBackend", "ObjectStat", "backend_from_config"]
