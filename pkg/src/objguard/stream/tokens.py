"""Incremental tokenizers for JSON and CSV byte streams.

Both tokenizers pull byte chunks from an iterable (or a file-like object)
and never hold more than the unconsumed tail of the current chunk plus the
token being assembled, so memory is bounded by the largest scalar.
"""

from __future__ import annotations

import codecs
import csv
import re
from dataclasses import dataclass
from typing import Any, BinaryIO, Iterable, Iterator, Union

from objguard.errors import ParseError

CHUNK_SIZE = 64 * 1024
# how far a fast skip may buffer ahead to swallow one container whole
SKIP_LOOKAHEAD = 1024 * 1024

Source = Union[Iterable[bytes], BinaryIO, bytes]

# token codes yielded by scan_json
OBJ_START, OBJ_END, ARR_START, ARR_END, KEY, SCALAR, CHUNK, RAW, NO_SKIP, FLUSH = range(10)

# sent into scan_json right after a container start to request a fast skip
SKIP = object()

try:
    from objguard.stream._skip import skip_value
except ImportError:  # accelerator not built; token-level scanning only
    skip_value = None

_TOKEN = re.compile(
    rb"[ \t\n\r]*(?:"
    rb"([{}\[\]:,])"
    rb'|("[^"\\\x00-\x1f]*(?:\\(?:["\\/bfnrt]|u[0-9a-fA-F]{4})[^"\\\x00-\x1f]*)*")'
    rb"|(-?(?:0|[1-9][0-9]*)(?:\.[0-9]+)?(?:[eE][+-]?[0-9]+)?)"
    rb"|(true|false|null)"
    rb")"
)
_WS = b" \t\n\r"
_MAYBE_PARTIAL = frozenset(b'"-0123456789tfn')

# grammar states
_VALUE, _VALUE_OR_END, _KEY_OR_END, _KEY, _COLON, _COMMA_OR_END, _DONE = range(7)


def iter_chunks(source: Source, size: int = CHUNK_SIZE) -> Iterator[bytes]:
    if isinstance(source, (bytes, bytearray, memoryview)):
        data = bytes(source)
        for i in range(0, len(data), size):
            yield data[i : i + size]
        return
    read = getattr(source, "read", None)
    if read is not None:
        while True:
            chunk = read(size)
            if not chunk:
                return
            yield chunk
    else:
        for chunk in source:
            if chunk:
                yield bytes(chunk)


def scan_json(source: Source) -> Iterator[tuple[int, bytes, int]]:
    """Yield validated ``(code, text, offset)`` tokens of one JSON document.

    Commas and colons are checked but not yielded. ``CHUNK`` tokens carry the
    raw input chunk that was just read (for byte accounting); ``FLUSH`` comes
    right before a read that may block.
    Raises :class:`ParseError` on malformed input.

    Sending :data:`SKIP` in reply to a container start asks the scanner to
    consume the whole container at once. It answers with ``RAW`` and the
    compacted container text, or ``NO_SKIP`` when the container is not yet
    fully buffered (token-level scanning then simply continues).
    """
    chunks = iter_chunks(source)
    buf = b""
    pos = 0
    base = 0
    eof = False
    stack: list[int] = []
    state = _VALUE
    match = _TOKEN.match
    while True:
        m = match(buf, pos)
        # a number touching the buffer end (or followed only by a partial
        # fraction/exponent such as "1." or "2e+") may continue in the next chunk
        if m is None or (
            m.lastindex == 3 and not eof and len(buf) - m.end() <= 2 and not buf[m.end() :].strip(b".eE+-")
        ):
            if not eof:
                if m is None:
                    rest = buf[pos:].lstrip(_WS)
                    if rest and rest[0] not in _MAYBE_PARTIAL:
                        raise ParseError(base + len(buf) - len(rest), "unexpected byte")
                # the next read may block; let the consumer emit what it has
                yield FLUSH, b"", base + len(buf)
                chunk = next(chunks, None)
                if chunk is None:
                    eof = True
                else:
                    base += pos
                    buf = buf[pos:] + chunk
                    pos = 0
                    yield CHUNK, chunk, base + len(buf) - len(chunk)
                continue
            if m is None:
                rest = buf[pos:].lstrip(_WS)
                if rest:
                    raise ParseError(base + len(buf) - len(rest), "unexpected input")
                if state != _DONE:
                    raise ParseError(base + len(buf), "unexpected end of input")
                return
        idx = m.lastindex
        text = m.group(idx)
        offset = base + m.start(idx)
        pos = m.end()
        if state == _DONE:
            raise ParseError(offset, "trailing data after document")
        if idx == 1:
            c = text[0]
            if c == 0x2C:  # ,
                if state != _COMMA_OR_END:
                    raise ParseError(offset, "unexpected ','")
                state = _KEY if stack[-1] == OBJ_START else _VALUE
            elif c == 0x3A:  # :
                if state != _COLON:
                    raise ParseError(offset, "unexpected ':'")
                state = _VALUE
            elif c == 0x7B or c == 0x5B:  # { [
                if state not in (_VALUE, _VALUE_OR_END):
                    raise ParseError(offset, "unexpected container start")
                if c == 0x7B:
                    stack.append(OBJ_START)
                    state = _KEY_OR_END
                    cmd = yield OBJ_START, text, offset
                else:
                    stack.append(ARR_START)
                    state = _VALUE_OR_END
                    cmd = yield ARR_START, text, offset
                if cmd is SKIP:
                    start = m.start(idx)
                    status, end, raw = (1, 0, None) if skip_value is None else skip_value(buf, start)
                    # a container straddling the chunk boundary: read ahead, growing
                    # geometrically so each rescan at least doubles the span
                    pending: list[bytes] = []
                    while status == 1 and skip_value is not None and not eof and len(buf) - start < SKIP_LOOKAHEAD:
                        if start:
                            base += start
                            pos -= start
                            buf = buf[start:]
                            start = 0
                        want = max(len(buf), CHUNK_SIZE)
                        got = 0
                        grown = [buf]
                        while got < want:
                            chunk = next(chunks, None)
                            if chunk is None:
                                eof = True
                                break
                            grown.append(chunk)
                            pending.append(chunk)
                            got += len(chunk)
                        buf = b"".join(grown)
                        status, end, raw = skip_value(buf, start)
                    if status == 2:
                        raise ParseError(base + end, "invalid JSON")
                    if status == 1:
                        yield NO_SKIP, b"", offset
                    else:
                        if raw is None:
                            raw = buf[start:end]
                        pos = end
                        stack.pop()
                        state = _COMMA_OR_END if stack else _DONE
                        yield RAW, raw, offset
                    # chunks read ahead are reported after the reply
                    if pending:
                        chunk_at = base + len(buf) - sum(len(c) for c in pending)
                        for chunk in pending:
                            yield CHUNK, chunk, chunk_at
                            chunk_at += len(chunk)
            else:  # } ]
                want = OBJ_START if c == 0x7D else ARR_START
                ok = _KEY_OR_END if c == 0x7D else _VALUE_OR_END
                if not stack or stack[-1] != want or state not in (ok, _COMMA_OR_END):
                    raise ParseError(offset, "unexpected container end")
                stack.pop()
                state = _COMMA_OR_END if stack else _DONE
                yield (OBJ_END if c == 0x7D else ARR_END), text, offset
        elif state in (_KEY_OR_END, _KEY):
            if idx != 2:
                raise ParseError(offset, "expected object key")
            state = _COLON
            yield KEY, text, offset
        elif state in (_VALUE, _VALUE_OR_END):
            state = _COMMA_OR_END if stack else _DONE
            yield SCALAR, text, offset
        else:
            raise ParseError(offset, "unexpected value")


@dataclass(frozen=True)
class StreamToken:
    kind: str
    byte_offset: int
    value: Any = None
    index: int | None = None


def tokenize_json(source: Source) -> Iterator[StreamToken]:
    """Public token view of a JSON stream, ending with ``EndOfStream``."""
    import json

    names = {OBJ_START: "ObjectStart", OBJ_END: "ObjectEnd", ARR_START: "ArrayStart", ARR_END: "ArrayEnd"}
    last = 0
    for code, text, offset in scan_json(source):
        if code == CHUNK:
            last = offset + len(text)
            continue
        if code == FLUSH:
            continue
        if code == KEY:
            yield StreamToken("Key", offset, json.loads(text))
        elif code == SCALAR:
            yield StreamToken("Scalar", offset, json.loads(text))
        else:
            yield StreamToken(names[code], offset)
    yield StreamToken("EndOfStream", last)


# -- CSV -------------------------------------------------------------------


def iter_lines(source: Source) -> Iterator[tuple[str, int]]:
    """Decode UTF-8 chunks into ``(line, byte_offset)`` pairs keeping ``\\n``."""
    decoder = codecs.getincrementaldecoder("utf-8")()
    pending = ""
    offset = 0
    for chunk in iter_chunks(source):
        text = pending + decoder.decode(chunk)
        start = 0
        while True:
            nl = text.find("\n", start)
            if nl < 0:
                break
            line = text[start : nl + 1]
            yield line, offset
            offset += len(line.encode())
            start = nl + 1
        pending = text[start:]
    pending += decoder.decode(b"", final=True)
    if pending:
        yield pending, offset


def scan_csv(source: Source) -> Iterator[tuple[list[str], int]]:
    """Yield ``(fields, byte_offset)`` per CSV record (header included)."""
    offsets: list[int] = []

    def lines():
        for line, off in iter_lines(source):
            offsets.append(off)
            yield line

    reader = csv.reader(lines(), delimiter=",", quotechar='"', strict=True)
    try:
        for row in reader:
            yield row, offsets[0] if offsets else 0
            offsets.clear()
    except csv.Error as exc:
        raise ParseError(offsets[-1] if offsets else 0, f"CSV: {exc}") from None


def tokenize_csv(source: Source) -> Iterator[StreamToken]:
    last = 0
    for row, offset in scan_csv(source):
        yield StreamToken("RecordStart", offset)
        for i, text in enumerate(row):
            yield StreamToken("Field", offset, text, i)
        yield StreamToken("RecordEnd", offset)
        last = offset
    yield StreamToken("EndOfStream", last)
