"""Privacy policy documents: parsing, compilation and condition evaluation.

A policy is a JSON document naming one object and a chain of UDF steps::

    {"Id": "employee.policy",
     "Object": "v1/{account}/{container}/employees.json",
     "Condition": {"DateNotEquals": {"Day": ["Sat", "Sun"]}},
     "Action": {"StartAt": "Step1", "Steps": {"Step1": {...}}}}

:func:`parse_policy` checks syntax and shape, :func:`validate_policy` resolves
UDF names and event types and linearizes the ``StartAt``/``Next`` chain into
a :class:`CompiledPolicy`, the portable execution plan stored in the
metadata service.
"""

from __future__ import annotations

import json
import re
import time
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from decimal import Decimal, InvalidOperation
from typing import Any, Collection, Iterable, Mapping

from objguard.errors import (
    CyclicChain,
    MalformedJson,
    MalformedPolicy,
    MissingField,
    UnknownField,
    UnknownOperator,
    UnknownUdf,
    UnreachableStep,
    UnresolvableKey,
    UnsupportedPlanFormat,
)
from objguard.stream.events import EVENT_TYPES, EventSpec, compile_event_spec

PLAN_FORMAT_VERSION = 1
END = "End"

STRING_OPS = ("StringEquals", "StringNotEquals", "StringLike")
NUMERIC_OPS = (
    "NumericEquals",
    "NumericLessThan",
    "NumericLessThanEquals",
    "NumericGreaterThan",
    "NumericGreaterThanEquals",
)
DATE_OPS = ("DateEquals", "DateNotEquals")
OPERATORS = frozenset(STRING_OPS + NUMERIC_OPS + DATE_OPS)

WEEKDAYS = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun")

_TOP_FIELDS = {"Id", "Object", "Condition", "Action"}
_ACTION_FIELDS = {"StartAt", "Steps"}
_STEP_FIELDS = {"Id", "EventType", "Input", "Next"}
_EVENT_FIELDS = {"Type", "Input"}


# -- documents -------------------------------------------------------------


@dataclass(frozen=True)
class ConditionClause:
    operator: str
    key: str
    values: tuple[Any, ...]


@dataclass(frozen=True)
class EventBlock:
    type: str
    input: tuple[dict, ...] = ()


@dataclass(frozen=True)
class StepSpec:
    udf_id: str
    next: str
    event_type: EventBlock | None = None
    input: tuple[dict, ...] = ()


@dataclass(frozen=True)
class PolicyDocument:
    id: str
    object: str
    conditions: tuple[ConditionClause, ...]
    start_at: str
    steps: Mapping[str, StepSpec]
    source: str = field(default="", compare=False, repr=False)


def _check_fields(obj: Mapping, allowed: set[str], required: Iterable[str], where: str) -> None:
    for key in obj:
        if key not in allowed:
            raise UnknownField(f"{where}{key}")
    for key in required:
        if key not in obj:
            raise MissingField(f"{where}{key}")


def _param_list(value: Any, where: str) -> tuple[dict, ...]:
    if not isinstance(value, list) or not all(isinstance(p, dict) for p in value):
        raise MalformedPolicy(f"{where} must be a list of objects")
    return tuple(value)


def _parse_conditions(raw: Any) -> tuple[ConditionClause, ...]:
    if not isinstance(raw, dict):
        raise MalformedPolicy("Condition must be an object")
    clauses = []
    for op, body in raw.items():
        if op not in OPERATORS:
            raise UnknownOperator(op)
        if not isinstance(body, dict) or not body:
            raise MalformedPolicy(f"Condition.{op} must be a non-empty object")
        for key, values in body.items():
            if not isinstance(values, list) or not values:
                raise MalformedPolicy(f"Condition.{op}.{key} must be a non-empty list")
            clauses.append(ConditionClause(op, key, tuple(values)))
    return tuple(clauses)


def parse_policy(text: bytes | str) -> PolicyDocument:
    """Parse policy JSON into a :class:`PolicyDocument` (syntax and shape only)."""
    try:
        if isinstance(text, bytes):
            text = text.decode("utf-8")
        raw = json.loads(text)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedJson(str(exc)) from None
    if not isinstance(raw, dict):
        raise MalformedPolicy("policy must be a JSON object")

    _check_fields(raw, _TOP_FIELDS, ("Id", "Object", "Action"), "")
    pid, obj = raw["Id"], raw["Object"]
    if not isinstance(pid, str) or not pid:
        raise MalformedPolicy("Id must be a non-empty string")
    if not isinstance(obj, str) or not obj:
        raise MalformedPolicy("Object must be a non-empty string")
    ObjectPattern.parse(obj)
    conditions = _parse_conditions(raw.get("Condition", {}))

    action = raw["Action"]
    if not isinstance(action, dict):
        raise MalformedPolicy("Action must be an object")
    _check_fields(action, _ACTION_FIELDS, _ACTION_FIELDS, "Action.")
    if not isinstance(action["StartAt"], str):
        raise MalformedPolicy("Action.StartAt must be a string")
    if not isinstance(action["Steps"], dict) or not action["Steps"]:
        raise MalformedPolicy("Action.Steps must be a non-empty object")

    steps: dict[str, StepSpec] = {}
    for sid, body in action["Steps"].items():
        where = f"Action.Steps.{sid}."
        if not isinstance(body, dict):
            raise MalformedPolicy(f"{where[:-1]} must be an object")
        _check_fields(body, _STEP_FIELDS, ("Id", "Next"), where)
        if not isinstance(body["Id"], str) or not isinstance(body["Next"], str):
            raise MalformedPolicy(f"{where}Id and {where}Next must be strings")
        event = None
        if "EventType" in body:
            eb = body["EventType"]
            if not isinstance(eb, dict):
                raise MalformedPolicy(f"{where}EventType must be an object")
            _check_fields(eb, _EVENT_FIELDS, ("Type",), where + "EventType.")
            event = EventBlock(eb["Type"], _param_list(eb.get("Input", []), where + "EventType.Input"))
        steps[sid] = StepSpec(
            udf_id=body["Id"],
            next=body["Next"],
            event_type=event,
            input=_param_list(body.get("Input", []), where + "Input"),
        )
    return PolicyDocument(pid, obj, conditions, action["StartAt"], steps, source=text)


# -- object addressing -----------------------------------------------------


@dataclass(frozen=True)
class ObjectPath:
    account: str
    container: str
    object: str

    @classmethod
    def parse(cls, path: str) -> "ObjectPath":
        """Parse ``/account/container/object`` (an optional ``/v1`` prefix is accepted)."""
        text = path.lstrip("/")
        if text.startswith("v1/"):
            text = text[3:]
        parts = text.split("/", 2)
        if len(parts) != 3 or not all(parts):
            raise ValueError(f"object path needs 3 non-empty segments: {path!r}")
        return cls(*parts)

    def __str__(self) -> str:
        return f"/{self.account}/{self.container}/{self.object}"


ACCOUNT = "{account}"
CONTAINER = "{container}"


@dataclass(frozen=True)
class ObjectPattern:
    account: str
    container: str
    object: str

    @classmethod
    def parse(cls, pattern: str) -> "ObjectPattern":
        text = pattern.strip("/")
        if text.startswith("v1/"):
            text = text[3:]
        parts = text.split("/", 2)
        if len(parts) != 3 or not all(parts):
            raise MalformedPolicy(f"Object must be v1/<account>/<container>/<object>: {pattern!r}")
        if "{" in parts[2]:
            raise MalformedPolicy("placeholders are only allowed for account and container")
        for seg, ph in ((parts[0], ACCOUNT), (parts[1], CONTAINER)):
            if "{" in seg and seg != ph:
                raise MalformedPolicy(f"bad placeholder segment {seg!r}")
        return cls(*parts)

    def matches(self, path: ObjectPath) -> bool:
        return (
            (self.account == ACCOUNT or self.account == path.account)
            and (self.container == CONTAINER or self.container == path.container)
            and self.object == path.object
        )

    def __str__(self) -> str:
        return f"v1/{self.account}/{self.container}/{self.object}"


def candidate_patterns(path: ObjectPath) -> list[str]:
    """Every pattern string that could match ``path``, most specific first."""
    return [
        str(ObjectPattern(a, c, path.object))
        for a, c in (
            (path.account, path.container),
            (path.account, CONTAINER),
            (ACCOUNT, path.container),
            (ACCOUNT, CONTAINER),
        )
    ]


# -- compiled plans --------------------------------------------------------


@dataclass(frozen=True)
class PlanStep:
    step_id: str
    udf_id: str
    event: EventSpec | None
    input: tuple[dict, ...]
    next: str

    def params(self) -> dict[str, Any]:
        """Flatten the step's ``Input`` blocks into one mapping (later keys win)."""
        merged: dict[str, Any] = {}
        for block in self.input:
            merged.update(block)
        return merged


@dataclass(frozen=True)
class CompiledPolicy:
    id: str
    object_pattern: ObjectPattern
    conditions: tuple[ConditionClause, ...]
    plan: tuple[PlanStep, ...]
    compiled_at: float = 0.0
    source: str = field(default="", compare=False, repr=False)

    def to_json(self) -> bytes:
        doc = {
            "format": PLAN_FORMAT_VERSION,
            "id": self.id,
            "object": str(self.object_pattern),
            "conditions": [[c.operator, c.key, list(c.values)] for c in self.conditions],
            "plan": [
                {
                    "step": s.step_id,
                    "udf": s.udf_id,
                    "event": None if s.event is None else {"type": s.event.type, "input": list(s.event.input)},
                    "input": list(s.input),
                    "next": s.next,
                }
                for s in self.plan
            ],
            "compiledAt": self.compiled_at,
            "source": self.source,
        }
        return json.dumps(doc, separators=(",", ":"), ensure_ascii=False).encode()

    @classmethod
    def from_json(cls, data: bytes | str) -> "CompiledPolicy":
        try:
            doc = json.loads(data)
        except (ValueError, UnicodeDecodeError) as exc:
            raise MalformedJson(str(exc)) from None
        if not isinstance(doc, dict) or doc.get("format") != PLAN_FORMAT_VERSION:
            raise UnsupportedPlanFormat(f"unsupported compiled-plan format: {doc.get('format') if isinstance(doc, dict) else doc!r}")
        plan = tuple(
            PlanStep(
                s["step"],
                s["udf"],
                None if s["event"] is None else compile_event_spec(s["event"]["type"], s["event"]["input"]),
                tuple(s["input"]),
                s["next"],
            )
            for s in doc["plan"]
        )
        return cls(
            id=doc["id"],
            object_pattern=ObjectPattern.parse(doc["object"]),
            conditions=tuple(ConditionClause(op, k, tuple(v)) for op, k, v in doc["conditions"]),
            plan=plan,
            compiled_at=doc["compiledAt"],
            source=doc.get("source", ""),
        )


def linearize(doc: PolicyDocument) -> list[str]:
    """Step ids in ``StartAt``/``Next`` order; every step must be visited once."""
    order: list[str] = []
    seen: set[str] = set()
    cur = doc.start_at
    if cur not in doc.steps:
        raise MissingField(f"Action.Steps.{cur}")
    while cur != END:
        if cur in seen:
            raise CyclicChain(cur)
        if cur not in doc.steps:
            raise MissingField(f"Action.Steps.{cur}")
        seen.add(cur)
        order.append(cur)
        cur = doc.steps[cur].next
    for sid in doc.steps:
        if sid not in seen:
            raise UnreachableStep(sid)
    return order


def validate_policy(
    doc: PolicyDocument,
    registry: Collection[str],
    event_types: Collection[str] | None = None,
) -> CompiledPolicy:
    """Compile a parsed document against the UDF registry and event-type set."""
    known_events = set(EVENT_TYPES) if event_types is None else set(event_types)
    for sid, step in doc.steps.items():
        if step.udf_id not in registry:
            raise UnknownUdf(step.udf_id)
    order = linearize(doc)
    plan = []
    for sid in order:
        step = doc.steps[sid]
        event = None
        if step.event_type is not None:
            event = compile_event_spec(step.event_type.type, step.event_type.input, known_events)
        plan.append(PlanStep(sid, step.udf_id, event, step.input, step.next))
    return CompiledPolicy(
        id=doc.id,
        object_pattern=ObjectPattern.parse(doc.object),
        conditions=doc.conditions,
        plan=tuple(plan),
        compiled_at=time.time(),
        source=doc.source,
    )


def compile_policy(text: bytes | str, registry: Collection[str], event_types: Collection[str] | None = None) -> CompiledPolicy:
    return validate_policy(parse_policy(text), registry, event_types)


def match_object(policy: CompiledPolicy, path: ObjectPath) -> bool:
    return policy.object_pattern.matches(path)


# -- conditions ------------------------------------------------------------


@dataclass
class RequestContext:
    """What condition clauses may look at.

    ``Day`` (three-letter weekday), ``Hour``, ``Minute``, ``Date`` and
    ``CurrentTime`` derive from ``clock`` in UTC; other keys are looked up in
    ``headers`` (case-insensitively) and then ``attributes``.
    """

    clock: datetime
    headers: Mapping[str, str] = field(default_factory=dict)
    attributes: Mapping[str, Any] = field(default_factory=dict)

    def lookup(self, key: str) -> Any:
        clock = self.clock
        if clock.tzinfo is None:
            clock = clock.replace(tzinfo=timezone.utc)
        clock = clock.astimezone(timezone.utc)
        if key == "Day":
            return WEEKDAYS[clock.weekday()]
        if key == "Hour":
            return clock.hour
        if key == "Minute":
            return clock.minute
        if key == "Date":
            return clock.date()
        if key == "CurrentTime":
            return clock
        lowered = key.lower()
        for name, value in self.headers.items():
            if name.lower() == lowered:
                return value
        if key in self.attributes:
            return self.attributes[key]
        raise UnresolvableKey(key)


def _like(pattern: str, text: str) -> bool:
    """Glob match where only ``*`` and ``?`` are special."""
    rx = "".join(".*" if ch == "*" else "." if ch == "?" else re.escape(ch) for ch in pattern)
    return re.fullmatch(rx, text, re.DOTALL) is not None


def _decimal(v: Any) -> Decimal | None:
    if isinstance(v, bool):
        return None
    try:
        return Decimal(str(v))
    except InvalidOperation:
        return None


def _as_date(v: Any) -> date | datetime | str:
    if isinstance(v, (date, datetime)):
        return v
    text = str(v)
    for parse in (date.fromisoformat, datetime.fromisoformat):
        try:
            return parse(text)
        except ValueError:
            pass
    return text


def _dates_equal(actual: Any, expected: Any) -> bool:
    a, e = _as_date(actual), _as_date(expected)
    if isinstance(a, datetime) and type(e) is date:
        return a.date() == e
    if isinstance(e, datetime) and type(a) is date:
        return e.date() == a
    if isinstance(a, datetime) and isinstance(e, datetime):
        if a.tzinfo is None:
            a = a.replace(tzinfo=timezone.utc)
        if e.tzinfo is None:
            e = e.replace(tzinfo=timezone.utc)
    return a == e


_NUMERIC_CMP = {
    "NumericEquals": lambda a, b: a == b,
    "NumericLessThan": lambda a, b: a < b,
    "NumericLessThanEquals": lambda a, b: a <= b,
    "NumericGreaterThan": lambda a, b: a > b,
    "NumericGreaterThanEquals": lambda a, b: a >= b,
}


def evaluate_clause(clause: ConditionClause, ctx: RequestContext) -> bool:
    actual = ctx.lookup(clause.key)
    op, values = clause.operator, clause.values
    if op == "StringEquals":
        return any(str(actual) == str(v) for v in values)
    if op == "StringNotEquals":
        return all(str(actual) != str(v) for v in values)
    if op == "StringLike":
        return any(_like(str(v), str(actual)) for v in values)
    if op in _NUMERIC_CMP:
        a = _decimal(actual)
        if a is None:
            return False
        cmp = _NUMERIC_CMP[op]
        return any((b := _decimal(v)) is not None and cmp(a, b) for v in values)
    if op in DATE_OPS:
        hit = any(_dates_equal(actual, v) for v in values)
        return hit if op == "DateEquals" else not hit
    raise UnknownOperator(op)


def evaluate_conditions(policy: CompiledPolicy, ctx: RequestContext) -> bool:
    """True iff every clause holds (conjunction; empty set is vacuously true)."""
    return all(evaluate_clause(c, ctx) for c in policy.conditions)
