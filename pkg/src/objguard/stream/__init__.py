"""Streaming tokenizers, event subscriptions and the observable builders."""

from objguard.stream.builder import (
    CsvStreamBuilder,
    JsonStreamBuilder,
    StreamBuilder,
    StreamStats,
    builder_for,
    install,
    run_stream,
)
from objguard.stream.events import (
    DROP,
    DROP_RECORD,
    EVENT_TYPES,
    PASS,
    REPLACE,
    Event,
    EventSpec,
    Verdict,
    compile_event_spec,
)
from objguard.stream.jsonpath import PathMatcher, compile_jsonpath
from objguard.stream.tokens import tokenize_csv, tokenize_json

__all__ = [
    "CsvStreamBuilder",
    "DROP",
    "DROP_RECORD",
    "EVENT_TYPES",
    "Event",
    "EventSpec",
    "JsonStreamBuilder",
    "PASS",
    "PathMatcher",
    "REPLACE",
    "StreamBuilder",
    "StreamStats",
    "Verdict",
    "builder_for",
    "compile_event_spec",
    "compile_jsonpath",
    "install",
    "run_stream",
    "tokenize_csv",
    "tokenize_json",
]
