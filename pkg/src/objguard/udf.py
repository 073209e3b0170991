"""Transformation UDFs: the observers installed on an object stream.

Each UDF instance lives for exactly one enforcement session. ``update`` is
called once per subscribed event and answers with a
:class:`~objguard.stream.events.Verdict` (``None`` or the event itself mean
pass); ``complete`` runs once after the stream ends and may return
``(field, value)`` pairs to append to the view.

The registry is static. New UDFs are added with :func:`register_udf`.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

from objguard.errors import (
    BadPredicate,
    KeyMismatch,
    MalformedCiphertext,
    MissingLabelParams,
    MissingParam,
    MissingReEncToken,
)
from objguard.stream.events import Event, Verdict
from objguard.stream.jsonpath import compile_jsonpath

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Requester:
    user_id: str
    ulabel: str | None = None
    auth_token: str | None = None


@dataclass
class UdfContext:
    """Per-request, per-step view of what a UDF may consult.

    ``step_inputs`` are the step's ``Input`` blocks with ``meta://`` values
    already resolved; ``step_params`` is their merged mapping. ``key_lookup``
    fetches a published key of a user, ``(user_id, kind) -> bytes | None``.
    """

    requester: Requester
    reenc_token: str | None = None
    trapdoor: str | None = None
    headers: Mapping[str, str] = field(default_factory=dict)
    object_meta: Mapping[str, Any] = field(default_factory=dict)
    step_params: Mapping[str, Any] = field(default_factory=dict)
    step_inputs: tuple[Mapping[str, Any], ...] = ()
    policy_id: str = ""
    step_id: str = ""
    key_lookup: Callable[[str, str], bytes | None] | None = None

    def param(self, name: str) -> Any:
        if name not in self.step_params:
            raise MissingParam(name)
        return self.step_params[name]

    def for_step(self, step_id: str, inputs: tuple[Mapping[str, Any], ...]) -> "UdfContext":
        merged: dict[str, Any] = {}
        for block in inputs:
            merged.update(block)
        return dataclasses.replace(self, step_id=step_id, step_inputs=tuple(inputs), step_params=merged)


class Udf:
    """Base observer. Subclasses override :meth:`update` and maybe :meth:`complete`."""

    udf_id = "UDF"
    # True lets update answer DROP_RECORD (the builder then buffers records)
    record_scope = False

    def setup(self, ctx: UdfContext) -> None:
        """Validate parameters before the stream starts; raise to abort."""

    def update(self, event: Event, ctx: UdfContext) -> Verdict | Event | None:
        return event

    def complete(self, ctx: UdfContext) -> list[tuple[str, Any]] | None:
        return None


class Noop(Udf):
    """Echo every event unchanged."""

    udf_id = "NOOP"

    def update(self, event: Event, ctx: UdfContext) -> Event:
        return event


def _as_set(value: Any) -> set[str]:
    if isinstance(value, str):
        return {value}
    if isinstance(value, (list, tuple)):
        return {v for v in value if isinstance(v, str)}
    return set()


class Clac(Udf):
    """Content-level access control with flat ``(ulabel, olabel)`` rules.

    Default deny: an element whose olabel no rule grants to the requester's
    ulabel is dropped, and the chain halts for it.
    """

    udf_id = "CLAC"

    def __init__(self) -> None:
        self.allowed: set[str] | None = None

    def setup(self, ctx: UdfContext) -> None:
        rules = []
        for block in ctx.step_inputs:
            if "ulabel" in block and "olabel" in block:
                rules.append((_as_set(block["ulabel"]), _as_set(block["olabel"])))
        if not rules:
            raise MissingLabelParams("CLAC needs at least one {ulabel, olabel} rule")
        ulabel = ctx.requester.ulabel
        allowed: set[str] = set()
        for ulabels, olabels in rules:
            if ulabel is not None and ulabel in ulabels:
                allowed |= olabels
        self.allowed = allowed

    def update(self, event: Event, ctx: UdfContext) -> Verdict | None:
        if self.allowed is None:
            self.setup(ctx)
        if event.marker is not None and event.marker in self.allowed:
            return None
        return Verdict.drop(halt=True)


def _resolved_bytes(value: Any) -> bytes:
    if isinstance(value, bytes):
        return value
    if isinstance(value, str):
        return value.encode()
    raise MalformedCiphertext(f"expected a key, got {type(value).__name__}", 0)


def _load(cls: Any, data: bytes) -> Any:
    """Keys are stored in binary form; base64 text is accepted as well."""
    try:
        return cls.from_bytes(data)
    except MalformedCiphertext:
        return cls.from_b64(data.strip())


def _output_field(expr: Any) -> str:
    if not isinstance(expr, str):
        raise MissingParam("output")
    path = compile_jsonpath(expr)
    if path.depth != 1 or path.steps[0] is None:
        raise BadPredicate(expr, "output must name one top-level field")
    return path.steps[0]


class Sum(Udf):
    """Homomorphic summation of encrypted values.

    Every consumed element is dropped from the view. ``complete`` appends
    ``{"sum": <base64 ciphertext>, "count": n}`` under the output field, or
    ``{"count": 0}`` when nothing was summed.
    """

    udf_id = "SUM"

    def __init__(self) -> None:
        self.owner = None
        self.field_name: str | None = None
        self.accum = None
        self.count = 0

    def setup(self, ctx: UdfContext) -> None:
        from objguard.crypto.hom import HomPublicKey

        self.owner = _load(HomPublicKey, _resolved_bytes(ctx.param("keyOwner")))
        self.field_name = _output_field(ctx.param("output"))

    def update(self, event: Event, ctx: UdfContext) -> Verdict:
        from objguard.crypto.hom import HomCiphertext, hom_add

        if self.owner is None:
            self.setup(ctx)
        value = event.value
        if not isinstance(value, str):
            raise MalformedCiphertext("expected a base64 ciphertext string", event.position)
        try:
            ct = HomCiphertext.from_b64(value)
        except MalformedCiphertext as exc:
            raise MalformedCiphertext(exc.reason, event.position) from None
        if ct.key_id != self.owner.key_id:
            raise KeyMismatch(f"value at byte {event.position} is not under the keyOwner key")
        # the first event initializes the accumulator
        self.accum = ct if self.accum is None else hom_add(self.accum, ct)
        self.count += 1
        return Verdict.drop(halt=True)

    def complete(self, ctx: UdfContext) -> list[tuple[str, Any]]:
        if self.field_name is None:
            self.setup(ctx)
        if self.accum is None:
            return [(self.field_name, {"count": 0})]
        return [(self.field_name, {"sum": self.accum.to_b64(), "count": self.count})]


class Pre(Udf):
    """Proxy re-encryption of a ciphertext (or of a SUM result's ``sum``).

    Without a usable token for the ciphertext's owner the element is
    dropped: the requester is not entitled to it.
    """

    udf_id = "PRE"

    def __init__(self) -> None:
        self.token = None
        self.token_error: str | None = None

    def _token(self, ctx: UdfContext) -> Any:
        from objguard.crypto.hom import ReEncToken

        if self.token is None and self.token_error is None:
            if not ctx.reenc_token:
                self.token_error = str(MissingReEncToken("no re-encryption token in request"))
            else:
                try:
                    self.token = ReEncToken.from_b64(ctx.reenc_token)
                except MalformedCiphertext as exc:
                    self.token_error = f"unusable re-encryption token: {exc}"
        return self.token

    def _reencrypt(self, token: Any, text: str, position: int) -> str | None:
        from objguard.crypto.hom import HomCiphertext, pre_reencrypt

        try:
            ct = HomCiphertext.from_b64(text)
        except MalformedCiphertext as exc:
            raise MalformedCiphertext(exc.reason, position) from None
        if ct.key_id != token.owner_id:
            return None
        return pre_reencrypt(token, ct).to_b64()

    def update(self, event: Event, ctx: UdfContext) -> Verdict | None:
        token = self._token(ctx)
        if token is None:
            logger.info("PRE drops element at byte %d: %s", event.position, self.token_error)
            return Verdict.drop(halt=True)
        value = event.value
        if isinstance(value, str):
            out = self._reencrypt(token, value, event.position)
            return Verdict.drop(halt=True) if out is None else Verdict.replace(out)
        if isinstance(value, dict):
            if "sum" not in value:
                return None
            if not isinstance(value["sum"], str):
                raise MalformedCiphertext("'sum' is not a base64 string", event.position)
            out = self._reencrypt(token, value["sum"], event.position)
            if out is None:
                return Verdict.drop(halt=True)
            return Verdict.replace({**value, "sum": out})
        raise MalformedCiphertext("expected a ciphertext string or a sum object", event.position)


class Search(Udf):
    """Keyword search over per-field search ciphertexts.

    With a trapdoor in the request, records whose field does not test
    positive are removed. Without one, everything passes.
    """

    udf_id = "SEARCH"
    record_scope = True

    def __init__(self) -> None:
        self.ready = False
        self.trapdoor = None
        self.pk = None

    def setup(self, ctx: UdfContext) -> None:
        from objguard.crypto.peks import PeksPublicKey, Trapdoor

        self.ready = True
        if not ctx.trapdoor:
            return
        try:
            self.trapdoor = Trapdoor.from_b64(ctx.trapdoor)
        except MalformedCiphertext as exc:
            raise MalformedCiphertext(f"search trapdoor: {exc.reason}", exc.offset) from None
        raw = ctx.key_lookup(ctx.requester.user_id, "peks") if ctx.key_lookup else None
        if raw is not None:
            try:
                self.pk = _load(PeksPublicKey, raw)
            except MalformedCiphertext:
                logger.warning("published search key of %s is unreadable", ctx.requester.user_id)

    def update(self, event: Event, ctx: UdfContext) -> Verdict | None:
        from objguard.crypto.peks import SearchCiphertext, peks_test

        if not self.ready:
            self.setup(ctx)
        if self.trapdoor is None:
            return None
        if self.pk is None:
            return Verdict.drop_record()
        value = event.value
        if not isinstance(value, str):
            raise MalformedCiphertext("expected a base64 search ciphertext", event.position)
        try:
            ct = SearchCiphertext.from_b64(value)
        except MalformedCiphertext as exc:
            raise MalformedCiphertext(exc.reason, event.position) from None
        if peks_test(self.pk, self.trapdoor, ct):
            return None
        return Verdict.drop_record()


REGISTRY: dict[str, type[Udf]] = {
    "NOOP": Noop,
    "CLAC": Clac,
    "SUM": Sum,
    "PRE": Pre,
    "SEARCH": Search,
}


def register_udf(name: str, cls: type[Udf]) -> None:
    """Extension point: make ``name`` available to policies compiled afterwards."""
    REGISTRY[name] = cls


def create_udf(name: str) -> Udf:
    return REGISTRY[name]()


def registry_names() -> frozenset[str]:
    return frozenset(REGISTRY)


__all__ = [
    "Clac",
    "Noop",
    "Pre",
    "REGISTRY",
    "Requester",
    "Search",
    "Sum",
    "Udf",
    "UdfContext",
    "create_udf",
    "register_udf",
    "registry_names",
]
