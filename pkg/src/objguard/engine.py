"""Per-request policy enforcement, the metadata store and the policy cache.

A GET runs three tasks in order: load the policy matching the object (cache,
then store), pick a stream builder for the object if the policy's conditions
hold, then instantiate each step's UDF with its ``meta://`` parameters
resolved and install it on the builder. The object is then streamed through
the chain.

Every failure on the policy path becomes :class:`AccessDenied`: a request
for an object with a matching policy never falls back to the raw bytes.
"""

from __future__ import annotations

import base64
import json
import logging
import os
import tempfile
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Callable, Iterable, Iterator, Mapping

from objguard.errors import (
    AccessDenied,
    BackendError,
    KeyNotFound,
    ObjectNotFound,
    ObjguardError,
    PolicyCompileError,
    UnknownUdf,
)
from objguard.policy import (
    CompiledPolicy,
    ObjectPath,
    RequestContext,
    candidate_patterns,
    compile_policy,
    evaluate_conditions,
)
from objguard.stream.builder import StreamStats, builder_for
from objguard.stream.events import EVENT_TYPES
from objguard.udf import REGISTRY, Requester, UdfContext, create_udf

logger = logging.getLogger(__name__)

META_SCHEME = "meta://"
POLICY_PREFIX = "policies/"
INDEX_PREFIX = "policy-index/"
KEY_PREFIX = "keys/"
LABEL_PREFIX = "labels/"
DEFAULT_CACHE_CAPACITY = 128

HEADER_REENC = "X-ReEnc-Token"
HEADER_TRAPDOOR = "X-Search-Trapdoor"
HEADER_LABEL = "X-User-Label"


# -- metadata store --------------------------------------------------------


class MetadataStore:
    """Thread-safe in-memory key/value store with last-write-wins semantics.

    With ``path`` set, the whole map is loaded from and atomically saved to
    a JSON snapshot (values base64-encoded) after every mutation.
    """

    def __init__(self, path: str | os.PathLike | None = None) -> None:
        self._data: dict[str, bytes] = {}
        self._lock = threading.RLock()
        self.path = os.fspath(path) if path is not None else None
        if self.path and os.path.exists(self.path):
            with open(self.path, "rb") as fh:
                raw = json.load(fh)
            self._data = {k: base64.b64decode(v) for k, v in raw.items()}

    def put(self, key: str, value: bytes | str) -> None:
        if not isinstance(key, str) or not key:
            raise ValueError("metadata keys are non-empty strings")
        data = value.encode() if isinstance(value, str) else bytes(value)
        with self._lock:
            self._data[key] = data
            self._save()

    def get(self, key: str) -> bytes:
        with self._lock:
            try:
                return self._data[key]
            except KeyError:
                raise KeyNotFound(key) from None

    def get_opt(self, key: str) -> bytes | None:
        with self._lock:
            return self._data.get(key)

    def delete(self, key: str) -> bool:
        with self._lock:
            existed = self._data.pop(key, None) is not None
            if existed:
                self._save()
            return existed

    def keys(self, prefix: str = "") -> list[str]:
        with self._lock:
            return sorted(k for k in self._data if k.startswith(prefix))

    def __contains__(self, key: object) -> bool:
        with self._lock:
            return key in self._data

    def __len__(self) -> int:
        with self._lock:
            return len(self._data)

    def _save(self) -> None:
        if not self.path:
            return
        snapshot = {k: base64.b64encode(v).decode("ascii") for k, v in self._data.items()}
        directory = os.path.dirname(os.path.abspath(self.path))
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".meta-")
        with os.fdopen(fd, "w") as fh:
            json.dump(snapshot, fh)
        os.replace(tmp, self.path)


def store_put(store: MetadataStore, key: str, value: bytes | str) -> None:
    store.put(key, value)


def store_get(store: MetadataStore, key: str) -> bytes:
    return store.get(key)


def resolve_meta(value: Any, store: MetadataStore) -> Any:
    """``meta://<key>`` becomes the stored bytes; anything else is a literal."""
    if isinstance(value, str) and value.startswith(META_SCHEME):
        return store.get(value[len(META_SCHEME) :])
    return value


def key_paths(user: str, kind: str) -> tuple[str, str]:
    """Both places a published key lives: the namespaced one and the
    ``<user>/keys/<kind>`` form that policies reference via ``meta://``."""
    return f"{KEY_PREFIX}{user}/{kind}", f"{user}/keys/{kind}"


def publish_key(store: MetadataStore, user: str, kind: str, data: bytes) -> None:
    for key in key_paths(user, kind):
        store.put(key, data)


def lookup_key(store: MetadataStore, user: str, kind: str) -> bytes | None:
    for key in key_paths(user, kind):
        value = store.get_opt(key)
        if value is not None:
            return value
    return None


def set_label(store: MetadataStore, user: str, ulabel: str) -> None:
    store.put(LABEL_PREFIX + user, ulabel)


def get_label(store: MetadataStore, user: str) -> str | None:
    value = store.get_opt(LABEL_PREFIX + user)
    return None if value is None else value.decode()


# -- policy cache ----------------------------------------------------------


class PolicyCache:
    """LRU map ``policy id -> CompiledPolicy``. Capacity 0 disables caching."""

    def __init__(self, capacity: int = DEFAULT_CACHE_CAPACITY) -> None:
        if capacity < 0:
            raise ValueError("cache capacity must be >= 0")
        self.capacity = capacity
        self._entries: OrderedDict[str, CompiledPolicy] = OrderedDict()
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def lookup(self, policy_id: str, loader: Callable[[str], CompiledPolicy]) -> CompiledPolicy:
        with self._lock:
            if policy_id in self._entries:
                self._entries.move_to_end(policy_id)
                self.hits += 1
                return self._entries[policy_id]
            self.misses += 1
        # the loader runs unlocked; a failure leaves the cache untouched
        value = loader(policy_id)
        self.put(policy_id, value)
        return value

    def put(self, policy_id: str, value: CompiledPolicy) -> None:
        if self.capacity == 0:
            return
        with self._lock:
            self._entries[policy_id] = value
            self._entries.move_to_end(policy_id)
            while len(self._entries) > self.capacity:
                evicted, _ = self._entries.popitem(last=False)
                logger.debug("policy cache evicted %s", evicted)

    def invalidate(self, policy_id: str) -> None:
        with self._lock:
            self._entries.pop(policy_id, None)

    def ids(self) -> list[str]:
        """Cached ids, least recently used first."""
        with self._lock:
            return list(self._entries)

    def __contains__(self, policy_id: object) -> bool:
        with self._lock:
            return policy_id in self._entries

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)


def cache_lookup(cache: PolicyCache, policy_id: str, loader: Callable[[str], CompiledPolicy]) -> CompiledPolicy:
    return cache.lookup(policy_id, loader)


# -- policy management -----------------------------------------------------


def put_policy(store: MetadataStore, cache: PolicyCache, text: bytes | str) -> CompiledPolicy:
    """Compile and store a policy; it replaces any earlier policy for the same object."""
    policy = compile_policy(text, REGISTRY, EVENT_TYPES)
    pattern = str(policy.object_pattern)
    previous = store.get_opt(INDEX_PREFIX + pattern)
    if previous is not None and previous.decode() != policy.id:
        old_id = previous.decode()
        store.delete(POLICY_PREFIX + old_id)
        cache.invalidate(old_id)
    # an id moved to a different object must not leave a stale index entry
    existing = store.get_opt(POLICY_PREFIX + policy.id)
    if existing is not None:
        try:
            old_pattern = str(CompiledPolicy.from_json(existing).object_pattern)
        except ObjguardError:
            old_pattern = None
        if old_pattern and old_pattern != pattern:
            store.delete(INDEX_PREFIX + old_pattern)
    store.put(POLICY_PREFIX + policy.id, policy.to_json())
    store.put(INDEX_PREFIX + pattern, policy.id)
    cache.invalidate(policy.id)
    return policy


def load_policy(store: MetadataStore, policy_id: str) -> CompiledPolicy:
    data = store.get(POLICY_PREFIX + policy_id)
    try:
        return CompiledPolicy.from_json(data)
    except (ObjguardError, KeyError, TypeError, ValueError) as exc:
        raise PolicyCompileError(f"stored policy {policy_id} is unusable: {exc}") from exc


def get_policy_source(store: MetadataStore, policy_id: str) -> str:
    return load_policy(store, policy_id).source


def delete_policy(store: MetadataStore, cache: PolicyCache, policy_id: str) -> None:
    data = store.get(POLICY_PREFIX + policy_id)
    try:
        pattern = str(CompiledPolicy.from_json(data).object_pattern)
        index = store.get_opt(INDEX_PREFIX + pattern)
        if index is not None and index.decode() == policy_id:
            store.delete(INDEX_PREFIX + pattern)
    except ObjguardError:
        logger.warning("deleting unreadable policy %s", policy_id)
    store.delete(POLICY_PREFIX + policy_id)
    cache.invalidate(policy_id)


def list_policies(store: MetadataStore) -> list[str]:
    return [k[len(POLICY_PREFIX) :] for k in store.keys(POLICY_PREFIX)]


def find_policy(path: ObjectPath, store: MetadataStore, cache: PolicyCache) -> CompiledPolicy | None:
    """Policy loading: the most specific pattern indexed for ``path`` wins."""
    for pattern in candidate_patterns(path):
        policy_id = store.get_opt(INDEX_PREFIX + pattern)
        if policy_id is None:
            continue
        try:
            return cache.lookup(policy_id.decode(), lambda pid: load_policy(store, pid))
        except KeyNotFound as exc:
            raise PolicyCompileError(f"index names missing policy {policy_id.decode()}") from exc
    return None


# -- enforcement -----------------------------------------------------------


@dataclass
class EnforcementRequest:
    path: ObjectPath
    user_id: str
    headers: Mapping[str, str] = field(default_factory=dict)
    clock: datetime | None = None
    auth_token: str | None = None

    def header(self, name: str) -> str | None:
        lowered = name.lower()
        for key, value in self.headers.items():
            if key.lower() == lowered:
                return value
        return None


@dataclass
class ViewStats:
    policy_id: str | None = None
    steps_run: int = 0
    bytes_in: int = 0
    bytes_out: int = 0
    events_emitted: int = 0
    ttfb_hint: float | None = None


@dataclass
class ViewResult:
    """A transformed view. ``stream`` must be consumed for ``stats`` to be final."""

    stream: Iterator[bytes]
    stats: ViewStats

    def read(self) -> bytes:
        return b"".join(self.stream)


def _passthrough(chunks: Iterable[bytes], stats: ViewStats, started: float) -> Iterator[bytes]:
    for chunk in chunks:
        if stats.ttfb_hint is None:
            stats.ttfb_hint = time.perf_counter() - started
        stats.bytes_in += len(chunk)
        stats.bytes_out += len(chunk)
        yield chunk


def _guarded(body: Iterator[bytes], builder_stats: StreamStats, stats: ViewStats, started: float) -> Iterator[bytes]:
    """Copy live builder statistics; mid-stream failures become denials."""
    try:
        for chunk in body:
            if stats.ttfb_hint is None:
                stats.ttfb_hint = time.perf_counter() - started
            stats.bytes_out += len(chunk)
            stats.bytes_in = builder_stats.bytes_in
            stats.events_emitted = builder_stats.events_emitted
            yield chunk
    except (ObjectNotFound, BackendError, AccessDenied):
        raise
    except Exception as exc:
        logger.warning("enforcement aborted mid-stream: %s", exc)
        raise AccessDenied(f"transformation failed: {exc}") from exc
    stats.bytes_in = builder_stats.bytes_in
    stats.events_emitted = builder_stats.events_emitted


class Enforcer:
    """Bundles the store, cache and backend one gateway process shares."""

    def __init__(self, store: MetadataStore, cache: PolicyCache, backend: Any, test_mode: bool = False) -> None:
        self.store = store
        self.cache = cache
        self.backend = backend
        self.test_mode = test_mode

    def enforce_get(self, req: EnforcementRequest) -> ViewResult:
        return enforce_get(req, self.backend, self.store, self.cache, test_mode=self.test_mode)


def _requester(req: EnforcementRequest, store: MetadataStore, test_mode: bool) -> Requester:
    ulabel = get_label(store, req.user_id)
    if test_mode:
        ulabel = req.header(HEADER_LABEL) or ulabel
    return Requester(req.user_id, ulabel, req.auth_token)


def _resolve_inputs(inputs: tuple[Mapping[str, Any], ...], store: MetadataStore) -> tuple[dict, ...]:
    return tuple({k: resolve_meta(v, store) for k, v in block.items()} for block in inputs)


def enforce_get(
    req: EnforcementRequest,
    backend: Any,
    store: MetadataStore,
    cache: PolicyCache,
    test_mode: bool = False,
) -> ViewResult:
    """Stream the object at ``req.path`` through its policy's UDF chain."""
    started = time.perf_counter()
    stats = ViewStats()
    try:
        policy = find_policy(req.path, store, cache)
    except AccessDenied:
        raise
    except Exception as exc:
        raise AccessDenied(f"policy loading failed: {exc}") from exc

    if policy is None:
        return ViewResult(_passthrough(backend.open(req.path), stats, started), stats)

    stats.policy_id = policy.id
    try:
        ctx = RequestContext(req.clock or datetime.now(timezone.utc), headers=dict(req.headers), attributes={"UserId": req.user_id})
        if not evaluate_conditions(policy, ctx):
            raise AccessDenied(f"conditions of policy {policy.id} do not hold")
        builder = builder_for(req.path.object)
        base = UdfContext(
            requester=_requester(req, store, test_mode),
            reenc_token=req.header(HEADER_REENC),
            trapdoor=req.header(HEADER_TRAPDOOR),
            headers=dict(req.headers),
            policy_id=policy.id,
            key_lookup=lambda user, kind: lookup_key(store, user, kind),
        )
        for step in policy.plan:
            if step.udf_id not in REGISTRY:
                raise UnknownUdf(step.udf_id)
            udf = create_udf(step.udf_id)
            step_ctx = base.for_step(step.step_id, _resolve_inputs(step.input, store))
            udf.setup(step_ctx)
            builder.install(step.event, udf, step_ctx)
            stats.steps_run += 1
    except AccessDenied:
        raise
    except Exception as exc:
        logger.info("denying %s: %s", req.path, exc)
        raise AccessDenied(f"policy {policy.id} cannot be enforced: {exc}") from exc

    source = backend.open(req.path)
    return ViewResult(_guarded(builder.stream(source), builder.stats, stats, started), stats)


__all__ = [
    "DEFAULT_CACHE_CAPACITY",
    "EnforcementRequest",
    "Enforcer",
    "HEADER_LABEL",
    "HEADER_REENC",
    "HEADER_TRAPDOOR",
    "MetadataStore",
    "PolicyCache",
    "ViewResult",
    "ViewStats",
    "cache_lookup",
    "delete_policy",
    "enforce_get",
    "find_policy",
    "get_label",
    "get_policy_source",
    "key_paths",
    "list_policies",
    "load_policy",
    "lookup_key",
    "publish_key",
    "put_policy",
    "resolve_meta",
    "set_label",
    "store_get",
    "store_put",
]
