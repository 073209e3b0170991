"""Stream builders: the observable side of the data plane.

A builder tokenizes an object as its bytes arrive, matches every value
against the installed subscriptions, pushes matches through the observer
chain one event at a time, and re-serializes the (possibly transformed)
stream in canonical form. When the source is exhausted each observer's
``complete`` hook runs in chain order and its output is appended to the
view.

Observers are duck-typed: ``update(event, ctx)`` returns a
:class:`~objguard.stream.events.Verdict` (``None`` or the unchanged event
count as pass), ``complete(ctx)`` returns ``(name, value)`` pairs or None.
An observer with a true ``record_scope`` attribute may answer with
``DROP_RECORD``; the builder then buffers the enclosing element.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from dataclasses import dataclass
from typing import Any, Callable, Iterator, Mapping

from objguard.errors import IncompatibleEventType, ObserverFailure, UnsupportedFormat
from objguard.stream.events import (
    CSV,
    DROP,
    DROP_RECORD,
    JSON,
    PASS,
    REPLACE,
    Event,
    EventSpec,
    Selector,
    Verdict,
)
from objguard.stream import tokens as _tokens
from objguard.stream.tokens import (
    ARR_END,
    ARR_START,
    CHUNK,
    FLUSH,
    KEY,
    OBJ_END,
    OBJ_START,
    RAW,
    SCALAR,
    SKIP,
    Source,
    iter_chunks,
    scan_csv,
    scan_json,
)

logger = logging.getLogger(__name__)

FLUSH_BYTES = 16 * 1024
EARLY_FLUSH_BYTES = 4 * 1024
FAST_SKIP = _tokens.skip_value is not None
_KEEP = Verdict()


@dataclass
class StreamStats:
    events_emitted: int = 0
    deliveries: int = 0
    bytes_in: int = 0
    bytes_out: int = 0


@dataclass
class Subscription:
    index: int
    spec: EventSpec
    observer: Any
    ctx: Any = None

    def __post_init__(self) -> None:
        self.type = self.spec.type
        self.is_marker = self.spec.is_marker
        self.update = self.observer.update

    @property
    def udf_id(self) -> str:
        return getattr(self.observer, "udf_id", type(self.observer).__name__)

    @property
    def record_scope(self) -> bool:
        return bool(getattr(self.observer, "record_scope", False))


Match = tuple[Subscription, Selector]


class StreamBuilder:
    """Base class; subclasses implement :meth:`stream` for one format."""

    format: str = ""

    def __init__(self) -> None:
        self.subscriptions: list[Subscription] = []
        self.observers: list[tuple[Any, Any]] = []
        self.stats = StreamStats()
        self._in_flight = False

    def install(self, spec: EventSpec | None, observer: Any, ctx: Any = None) -> Subscription | None:
        """Subscribe ``observer`` to events matching ``spec``.

        Every installed observer takes part in completion, in installation
        order, even when ``spec`` is None (no events).
        """
        self.observers.append((observer, ctx))
        if spec is None:
            return None
        if spec.format != self.format:
            raise IncompatibleEventType(self.format.upper(), spec.type)
        sub = Subscription(len(self.observers) - 1, spec, observer, ctx)
        self.subscriptions.append(sub)
        return sub

    def stream(self, source: Source) -> Iterator[bytes]:
        raise NotImplementedError

    def run(self, source: Source, sink: Any) -> StreamStats:
        write: Callable[[bytes], Any] = sink if callable(sink) else sink.write
        flush = getattr(sink, "flush", None)
        for chunk in self.stream(source):
            write(chunk)
            if flush is not None:
                flush()
        return self.stats

    # -- chain dispatch ----------------------------------------------------

    def _deliver(self, event: Event, matches: list[Match]) -> tuple[str, Event]:
        if self._in_flight:
            raise RuntimeError("observable already has an event in flight")
        self._in_flight = True
        delivered = 0
        try:
            outcome = PASS
            ev = event
            for sub, sel in matches:
                marker = sel.olabel if sub.is_marker else None
                if ev.type == sub.type and ev.marker == marker:
                    view = ev
                else:
                    view = ev.retyped(sub.type, marker)
                delivered += 1
                try:
                    verdict = sub.update(view, sub.ctx)
                except Exception as exc:
                    raise ObserverFailure(sub.udf_id, exc) from exc
                if verdict is None or verdict is view:
                    ev = view
                    continue
                if isinstance(verdict, Event):
                    verdict = Verdict.replace(verdict.value)
                action = verdict.action
                if action == REPLACE:
                    ev = view.with_value(verdict.value)
                    if outcome == PASS:
                        outcome = REPLACE
                elif action == DROP:
                    ev = view
                    if outcome != DROP_RECORD:
                        outcome = DROP
                elif action == DROP_RECORD:
                    ev = view
                    outcome = DROP_RECORD
                else:
                    ev = view
                if verdict.halt:
                    break
            return outcome, ev
        finally:
            self._in_flight = False
            self.stats.events_emitted += 1
            self.stats.deliveries += delivered

    def _complete(self, observer: Any, ctx: Any) -> list[tuple[str, Any]]:
        hook = getattr(observer, "complete", None)
        if hook is None:
            return []
        try:
            out = hook(ctx)
        except Exception as exc:
            raise ObserverFailure(getattr(observer, "udf_id", type(observer).__name__), exc) from exc
        if not out:
            return []
        if isinstance(out, Mapping):
            return list(out.items())
        return list(out)


def _match_key(sub: Subscription, sel: Selector) -> tuple[int, str | None]:
    # a marker subscription sees an element once per distinct label, so
    # an element carrying several labels is only kept if all are granted
    return sub.index, sel.olabel if sub.is_marker else None


def _dedupe(matches: list[Match]) -> list[Match]:
    seen: set[tuple[int, str | None]] = set()
    result = []
    for sub, sel in matches:
        key = _match_key(sub, sel)
        if key not in seen:
            seen.add(key)
            result.append((sub, sel))
    return result


def _decode_key(raw: bytes) -> str:
    if b"\\" in raw:
        return json.loads(raw)
    return raw[1:-1].decode("utf-8")


class _Node:
    """One step of the subscription trie; ``terminal`` holds matches ending here."""

    __slots__ = ("named", "wild", "terminal", "record")

    def __init__(self) -> None:
        self.named: dict[str, _Node] = {}
        self.wild: _Node | None = None
        self.terminal: list[Match] = []
        self.record = False


def _build_trie(pairs: list[Match]) -> _Node:
    root = _Node()
    for sub, sel in pairs:
        node = root
        for step in sel.path.steps:
            if step is None:
                if node.wild is None:
                    node.wild = _Node()
                nxt = node.wild
            else:
                nxt = node.named.get(step)
                if nxt is None:
                    nxt = node.named[step] = _Node()
            node = nxt
        key = _match_key(sub, sel)
        if all(_match_key(*m) != key for m in node.terminal):
            node.terminal.append((sub, sel))

    def finish(node: _Node) -> None:
        children = list(node.named.values()) + ([node.wild] if node.wild is not None else [])
        node.record = any(s.record_scope for c in children for s, _ in c.terminal)
        for c in children:
            finish(c)

    finish(root)
    return root


def _merge(a: list[Match], b: list[Match]) -> list[Match]:
    return _dedupe(sorted(a + b, key=lambda m: m[0].index))


class _Frame:
    __slots__ = (
        "is_obj",
        "path",
        "depth",
        "alive",
        "first",
        "index",
        "key_raw",
        "match",
        "record",
        "record_dropped",
        "saved_out",
        "position",
        "parent",
    )

    def __init__(self, is_obj, path, depth, alive, key_raw, parent, position):
        self.is_obj = is_obj
        self.path = path
        self.depth = depth
        self.alive = alive
        self.first = True
        self.index = 0
        self.key_raw = key_raw
        self.match = None
        self.record = False
        self.record_dropped = False
        self.saved_out = None
        self.position = position
        self.parent = parent


_NULL = b"null"


class JsonStreamBuilder(StreamBuilder):
    format = JSON

    def stream(self, source: Source) -> Iterator[bytes]:
        pairs: list[Match] = [(sub, sel) for sub in self.subscriptions for sel in sub.spec.selectors]
        yield from self._pass(source, pairs, complete=True)

    def _pass(self, source: Source, pairs: list[Match], complete: bool) -> Iterator[bytes]:
        stats = self.stats
        count_io = complete
        base_out = bytearray()
        out = base_out
        stack: list[_Frame] = []
        root = _build_trie(pairs)
        key_raw = b""
        dropped_open = 0  # open record frames already marked dropped
        tail = b""
        has_members = False

        def prefix(parent: _Frame | None, key: bytes) -> bytes:
            if parent is None:
                return b""
            sep = b"" if parent.first else b","
            parent.first = False
            return sep + key + b":" if parent.is_obj else sep

        def mark_record(start: int) -> bool:
            nonlocal dropped_open
            for i in range(start, -1, -1):
                f = stack[i]
                if f.record:
                    if not f.record_dropped:
                        f.record_dropped = True
                        dropped_open += 1
                    return True
            return False

        tokens = scan_json(source)
        send = tokens.send
        for code, text, offset in tokens:
            if code == FLUSH:
                # small outputs wait so early parse errors can still become a status
                if len(base_out) >= EARLY_FLUSH_BYTES:
                    data = bytes(base_out)
                    base_out.clear()
                    stats.bytes_out += len(data)
                    yield data
                continue
            if code == CHUNK:
                if count_io:
                    stats.bytes_in += len(text)
                if base_out:
                    data = bytes(base_out)
                    base_out.clear()
                    stats.bytes_out += len(data)
                    yield data
                continue
            if code == KEY:
                key_raw = text
                continue

            if code == OBJ_END or code == ARR_END:
                frame = stack.pop()
                parent = frame.parent
                if frame.saved_out is None:
                    if parent is None:
                        tail = text
                        has_members = not frame.first
                    else:
                        out += text
                    continue
                out += text
                content = bytes(out)
                out = frame.saved_out
                if frame.record_dropped:
                    dropped_open -= 1
                    if parent is None:
                        out += _NULL
                    continue
                result = content
                if frame.match and not dropped_open:
                    path = frame.path
                    ev = Event(frame.match[0][0].spec.type, path, content, position=frame.position)
                    outcome, ev = self._deliver(ev, frame.match)
                    if outcome == DROP or (outcome == DROP_RECORD and not mark_record(len(stack) - 1)):
                        if parent is None:
                            out += _NULL
                        continue
                    if outcome == DROP_RECORD:
                        continue
                    if outcome == REPLACE:
                        result = ev.encoded()
                if parent is None:
                    if result[-1:] == text:
                        out += result[:-1]
                        tail = result[-1:]
                        has_members = len(result) > 2
                    else:
                        out += result
                else:
                    out += prefix(parent, frame.key_raw)
                    out += result
                continue

            # a value begins: SCALAR, OBJ_START or ARR_START
            parent = stack[-1] if stack else None
            this_key = b""
            matched: list[Match] = []
            deeper: list[_Node] = []
            if parent is None:
                depth = 0
                path: tuple | None = ()
                if root.terminal:
                    matched = root.terminal
                if root.named or root.wild is not None:
                    deeper = [root]
            else:
                depth = parent.depth + 1
                if parent.is_obj:
                    this_key = key_raw
                    key = None
                else:
                    key = parent.index
                    parent.index += 1
                path = None
                if parent.alive:
                    if parent.is_obj:
                        key = _decode_key(this_key)
                    path = parent.path + (key,)
                    hits = []
                    for node in parent.alive:
                        if parent.is_obj:
                            child = node.named.get(key)
                            if child is not None:
                                hits.append(child)
                        if node.wild is not None:
                            hits.append(node.wild)
                    for child in hits:
                        if child.terminal:
                            matched = child.terminal if not matched else _merge(matched, child.terminal)
                        if child.named or child.wild is not None:
                            deeper.append(child)
            if matched and dropped_open:
                matched = []

            if code == SCALAR:
                val = text
                if matched:
                    ev = Event(matched[0][0].spec.type, path, text, position=offset)
                    outcome, ev = self._deliver(ev, matched)
                    if outcome == DROP or (
                        outcome == DROP_RECORD and not mark_record(len(stack) - 1)
                    ):
                        if parent is None:
                            out += _NULL
                        continue
                    if outcome == DROP_RECORD:
                        continue
                    if outcome == REPLACE:
                        val = ev.encoded()
                if parent is not None:
                    out += prefix(parent, this_key)
                out += val
                continue

            if not matched and not deeper and FAST_SKIP:
                reply = send(SKIP)
                if reply[0] == RAW:
                    raw = reply[1]
                    if parent is None:
                        out += raw[:-1]
                        tail = raw[-1:]
                        has_members = len(raw) > 2
                    else:
                        out += prefix(parent, this_key)
                        out += raw
                    continue

            frame = _Frame(code == OBJ_START, path, depth, deeper, b"", parent, offset)
            if parent is not None:
                frame.key_raw = this_key
            for node in deeper:
                if node.record:
                    frame.record = True
                    break
            if matched or frame.record:
                frame.match = matched
                frame.saved_out = out
                out = bytearray(text)
            else:
                if parent is not None:
                    out += prefix(parent, this_key)
                out += text
            stack.append(frame)

        if complete:
            self._append_completions(out, pairs, tail, has_members)
        else:
            out += tail
        if base_out:
            data = bytes(base_out)
            stats.bytes_out += len(data)
            yield data

    def _append_completions(self, out: bytearray, pairs: list[Match], tail: bytes, has_members: bool) -> None:
        for index, (observer, ctx) in enumerate(self.observers):
            for name, value in self._complete(observer, ctx):
                later = [(s, sel) for s, sel in pairs if s.index > index and sel.path.depth >= 1]
                fragment = json.dumps({name: value}, separators=(",", ":"), ensure_ascii=False).encode()
                inner = b"".join(self._pass(fragment, later, complete=False))[1:-1]
                if not inner:
                    continue
                if tail == b"}":
                    out += (b"," if has_members else b"") + inner
                elif tail == b"]":
                    out += (b"," if has_members else b"") + b"{" + inner + b"}"
                else:
                    logger.warning("completion %r dropped: document root is not a container", name)
                    continue
                has_members = True
        out += tail


class CsvStreamBuilder(StreamBuilder):
    """CSV dialect: comma separator, ``"`` quoting, header row, ``\\n`` records.

    The header row is passed through without events. A dropped field is
    written as an empty cell so records stay aligned with the header.
    """

    format = CSV

    def stream(self, source: Source) -> Iterator[bytes]:
        by_column: dict[int, list[Match]] = {}
        for sub in self.subscriptions:
            for sel in sub.spec.selectors:
                by_column.setdefault(sel.column, []).append((sub, sel))
        columns = sorted(by_column)
        for col in columns:
            by_column[col] = _dedupe(by_column[col])

        stats = self.stats
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")

        def counted():
            for chunk in iter_chunks(source):
                stats.bytes_in += len(chunk)
                yield chunk

        def drain() -> bytes:
            data = buf.getvalue().encode()
            buf.seek(0)
            buf.truncate()
            stats.bytes_out += len(data)
            return data

        header = True
        for row, offset in scan_csv(counted()):
            if header:
                header = False
                writer.writerow(row)
                yield drain()
                continue
            if self._process_row(row, offset, columns, by_column):
                writer.writerow(row)
            if buf.tell() >= FLUSH_BYTES:
                yield drain()

        for index, (observer, ctx) in enumerate(self.observers):
            for name, value in self._complete(observer, ctx):
                row = [name] + _completion_cells(value)
                later_cols = [c for c in columns if any(s.index > index for s, _ in by_column[c])]
                later = {c: [m for m in by_column[c] if m[0].index > index] for c in later_cols}
                if self._process_row(row, -1, later_cols, later):
                    writer.writerow(row)
        data = drain()
        if data:
            yield data

    def _process_row(self, row: list[str], offset: int, columns: list[int], by_column: dict[int, list[Match]]) -> bool:
        for col in columns:
            if col >= len(row):
                break
            matches = by_column[col]
            ev = Event(matches[0][0].spec.type, col, row[col], position=offset, format=CSV)
            outcome, ev = self._deliver(ev, matches)
            if outcome == DROP:
                row[col] = ""
            elif outcome == DROP_RECORD:
                return False
            elif outcome == REPLACE:
                row[col] = ev.encoded()
        return True


def _completion_cells(value: Any) -> list[str]:
    if isinstance(value, Mapping):
        return [_cell(v) for v in value.values()]
    if isinstance(value, (list, tuple)):
        return [_cell(v) for v in value]
    return [_cell(value)]


def _cell(v: Any) -> str:
    if isinstance(v, str):
        return v
    return json.dumps(v)


BUILDERS: dict[str, type[StreamBuilder]] = {
    ".json": JsonStreamBuilder,
    ".csv": CsvStreamBuilder,
}


def builder_for(object_name: str) -> StreamBuilder:
    """Factory: pick the builder subclass from the object's extension."""
    ext = os.path.splitext(object_name)[1].lower()
    cls = BUILDERS.get(ext)
    if cls is None:
        raise UnsupportedFormat(ext)
    return cls()


def install(builder: StreamBuilder, spec: EventSpec | None, observer: Any, ctx: Any = None) -> Subscription | None:
    return builder.install(spec, observer, ctx)


def run_stream(builder: StreamBuilder, source: Source, sink: Any) -> StreamStats:
    return builder.run(source, sink)
