"""Event types, compiled event specs and the Event record itself."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Mapping

from objguard.errors import BadPredicate, MalformedPolicy, UnknownEventType
from objguard.stream.jsonpath import PathMatcher, compile_jsonpath

JSON = "json"
CSV = "csv"


@dataclass(frozen=True)
class EventType:
    name: str
    format: str
    marker: bool


EVENT_TYPES: dict[str, EventType] = {
    t.name: t
    for t in (
        EventType("JSONPathEvent", JSON, False),
        EventType("JSONPathMarkerEvent", JSON, True),
        EventType("ColumnEvent", CSV, False),
        EventType("ColumnMarkerEvent", CSV, True),
    )
}


@dataclass(frozen=True)
class Selector:
    """One matchable target of an event spec: a JSON path or a CSV column."""

    path: PathMatcher | None = None
    column: int | None = None
    olabel: str | None = None


@dataclass(frozen=True)
class EventSpec:
    type: str
    input: tuple[Mapping[str, Any], ...] = ()
    selectors: tuple[Selector, ...] = ()

    @property
    def format(self) -> str:
        return EVENT_TYPES[self.type].format

    @property
    def is_marker(self) -> bool:
        return EVENT_TYPES[self.type].marker


def _column_index(value: Any) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise MalformedPolicy(f"column index must be a non-negative integer, got {value!r}")
    return value


def compile_event_spec(
    type_name: str,
    params: list[Mapping[str, Any]] | tuple[Mapping[str, Any], ...] = (),
    event_types: Mapping[str, EventType] | set[str] | None = None,
) -> EventSpec:
    known = EVENT_TYPES if event_types is None else event_types
    if type_name not in known or type_name not in EVENT_TYPES:
        raise UnknownEventType(type_name)
    etype = EVENT_TYPES[type_name]
    selectors: list[Selector] = []
    for block in params:
        if not isinstance(block, Mapping):
            raise MalformedPolicy(f"event input blocks must be objects, got {block!r}")
        olabel = block.get("olabel")
        if etype.marker and not isinstance(olabel, str):
            raise MalformedPolicy(f"{type_name} requires an 'olabel' string in each input block")
        if etype.format == JSON:
            if "Predicate" not in block:
                continue
            pred = block["Predicate"]
            if not isinstance(pred, str):
                raise BadPredicate(repr(pred), "predicate must be a string")
            selectors.append(Selector(path=compile_jsonpath(pred), olabel=olabel))
        else:
            cols: list[Any] = []
            if "column" in block:
                cols.append(block["column"])
            if "columns" in block:
                if not isinstance(block["columns"], list):
                    raise MalformedPolicy("'columns' must be a list")
                cols.extend(block["columns"])
            for col in cols:
                selectors.append(Selector(column=_column_index(col), olabel=olabel))
    if not selectors:
        need = "Predicate" if etype.format == JSON else "column or columns"
        raise MalformedPolicy(f"{type_name} requires {need}")
    return EventSpec(type_name, tuple(dict(b) for b in params), tuple(selectors))


_UNSET: Any = object()


@dataclass
class Event:
    """A matched element travelling through the observer chain.

    ``raw`` is the canonical serialized text of the element (JSON) or the
    field text (CSV); ``value`` is its decoded form. Replacing the value
    invalidates ``raw``, which is re-encoded on demand.
    """

    type: str
    path: tuple[str | int, ...] | int
    raw: Any = _UNSET
    marker: str | None = None
    position: int = 0
    format: str = JSON
    _value: Any = field(default=_UNSET, repr=False)

    @property
    def value(self) -> Any:
        if self._value is _UNSET:
            if self.format == JSON:
                self._value = json.loads(self.raw)
            else:
                self._value = self.raw
        return self._value

    def encoded(self) -> Any:
        if self.raw is _UNSET:
            if self.format == JSON:
                self.raw = json.dumps(
                    self._value, separators=(",", ":"), ensure_ascii=False
                ).encode()
            else:
                self.raw = "" if self._value is None else str(self._value)
        return self.raw

    def with_value(self, value: Any) -> "Event":
        return Event(
            self.type, self.path, _UNSET, self.marker, self.position, self.format, value
        )

    def retyped(self, type_name: str, marker: str | None) -> "Event":
        return Event(type_name, self.path, self.raw, marker, self.position, self.format, self._value)


PASS = "pass"
REPLACE = "replace"
DROP = "drop"
DROP_RECORD = "drop_record"


@dataclass(frozen=True)
class Verdict:
    """An observer's decision for one event.

    ``halt`` stops delivery of this event to later observers in the chain.
    ``DROP_RECORD`` removes the element enclosing the match (the CSV record,
    or the JSON container holding the matched member).
    """

    action: str = PASS
    value: Any = None
    halt: bool = False

    @classmethod
    def keep(cls) -> "Verdict":
        return _KEEP

    @classmethod
    def replace(cls, value: Any, halt: bool = False) -> "Verdict":
        return cls(REPLACE, value, halt)

    @classmethod
    def drop(cls, halt: bool = True) -> "Verdict":
        return cls(DROP, None, halt)

    @classmethod
    def drop_record(cls) -> "Verdict":
        return cls(DROP_RECORD, None, True)


_KEEP = Verdict()
