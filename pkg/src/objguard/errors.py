"""Exception hierarchy shared by every layer of the gateway.

The gateway maps these onto HTTP status codes, so each family has a single
base class: policy problems, stream problems, crypto problems and
enforcement outcomes.
"""

from __future__ import annotations


class ObjguardError(Exception):
    """Root of all library errors."""


# -- policy documents ------------------------------------------------------


class PolicyError(ObjguardError):
    """A policy document could not be parsed or compiled."""


class MalformedJson(PolicyError):
    pass


class MissingField(PolicyError):
    def __init__(self, name: str):
        super().__init__(f"missing field: {name}")
        self.name = name


class UnknownField(PolicyError):
    def __init__(self, name: str):
        super().__init__(f"unknown field: {name}")
        self.name = name


class MalformedPolicy(PolicyError):
    """Structurally invalid value (wrong type, empty list, bad pattern)."""


class UnknownOperator(PolicyError):
    def __init__(self, name: str):
        super().__init__(f"unknown condition operator: {name}")
        self.name = name


class UnknownUdf(PolicyError):
    def __init__(self, udf_id: str):
        super().__init__(f"unknown UDF: {udf_id}")
        self.udf_id = udf_id


class UnknownEventType(PolicyError):
    def __init__(self, name: str):
        super().__init__(f"unknown event type: {name}")
        self.name = name


class BadPredicate(PolicyError):
    def __init__(self, expr: str, reason: str = ""):
        msg = f"bad predicate {expr!r}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)
        self.expr = expr


class CyclicChain(PolicyError):
    def __init__(self, step_id: str):
        super().__init__(f"cyclic step chain at {step_id}")
        self.step_id = step_id


class UnreachableStep(PolicyError):
    def __init__(self, step_id: str):
        super().__init__(f"unreachable step: {step_id}")
        self.step_id = step_id


class UnresolvableKey(PolicyError):
    def __init__(self, key: str):
        super().__init__(f"condition key not present in request context: {key}")
        self.key = key


class UnsupportedPlanFormat(PolicyError):
    pass


# -- streams ---------------------------------------------------------------


class StreamError(ObjguardError):
    pass


class UnsupportedFormat(StreamError):
    def __init__(self, extension: str):
        super().__init__(f"no stream builder for extension {extension!r}")
        self.extension = extension


class IncompatibleEventType(StreamError):
    def __init__(self, fmt: str, event_type: str):
        super().__init__(f"event type {event_type} cannot be installed on a {fmt} builder")
        self.format = fmt
        self.event_type = event_type


class ParseError(StreamError):
    def __init__(self, offset: int, reason: str = "syntax error"):
        super().__init__(f"{reason} at byte {offset}")
        self.offset = offset


class ObserverFailure(StreamError):
    def __init__(self, udf_id: str, cause: BaseException):
        super().__init__(f"UDF {udf_id} failed: {cause!r}")
        self.udf_id = udf_id
        self.cause = cause


# -- crypto ----------------------------------------------------------------


class CryptoError(ObjguardError):
    pass


class PlaintextOutOfRange(CryptoError):
    pass


class LevelMismatch(CryptoError):
    pass


class KeyMismatch(CryptoError):
    """Ciphertexts or tokens bound to different keys were combined."""


class DiscreteLogNotFound(CryptoError):
    pass


class MalformedCiphertext(CryptoError):
    def __init__(self, reason: str = "", offset: int | None = None):
        msg = "malformed ciphertext"
        if reason:
            msg += f": {reason}"
        if offset is not None:
            msg += f" (stream offset {offset})"
        super().__init__(msg)
        self.reason = reason
        self.offset = offset


# -- UDFs ------------------------------------------------------------------


class UdfError(ObjguardError):
    pass


class MissingParam(UdfError):
    def __init__(self, name: str):
        super().__init__(f"missing UDF parameter: {name}")
        self.name = name


class MissingLabelParams(UdfError):
    pass


class MissingReEncToken(UdfError):
    pass


# -- enforcement -----------------------------------------------------------


class AccessDenied(ObjguardError):
    pass


class KeyNotFound(ObjguardError, KeyError):
    def __init__(self, key: str):
        super().__init__(key)
        self.key = key

    def __str__(self) -> str:
        return f"key not found: {self.key}"


class PolicyCompileError(AccessDenied):
    """A stored policy could not be loaded; the request is denied."""


class ObjectNotFound(ObjguardError):
    pass


class BackendError(ObjguardError):
    pass


class StorageFull(BackendError):
    pass


# -- client tools ----------------------------------------------------------


class TargetUnreachable(ObjguardError):
    pass


class HttpError(ObjguardError):
    def __init__(self, status: int, message: str = ""):
        super().__init__(f"{status} {message}".strip())
        self.status = status
        self.message = message


class MissingKeys(ObjguardError):
    pass
