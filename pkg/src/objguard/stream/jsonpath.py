"""Dotted JSONPath subset used by event subscriptions.

Supported grammar::

    path  := "$" step*
    step  := "." name | ".*"
    name  := one or more word characters or "-"

Filters, slices, bracket notation and recursive descent are rejected. A
named step matches an object member with that exact key; ``*`` matches any
single child, object member or array element alike.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

from objguard.errors import BadPredicate

_STEP = re.compile(r"\.(\*|[\w\-]+)")

WILDCARD = None


@dataclass(frozen=True)
class PathMatcher:
    source: str
    steps: tuple[str | None, ...]

    @property
    def depth(self) -> int:
        return len(self.steps)

    def matches(self, path: Sequence[str | int]) -> bool:
        if len(path) != len(self.steps):
            return False
        for step, key in zip(self.steps, path):
            if step is not WILDCARD and step != key:
                return False
        return True

    def step_matches(self, index: int, key: str | int) -> bool:
        """Whether step ``index`` (0-based) accepts ``key``."""
        step = self.steps[index]
        return step is WILDCARD or step == key

    def __str__(self) -> str:
        return self.source


def compile_jsonpath(expr: str) -> PathMatcher:
    if not isinstance(expr, str) or not expr.startswith("$"):
        raise BadPredicate(str(expr), "must start with '$'")
    steps: list[str | None] = []
    pos = 1
    while pos < len(expr):
        m = _STEP.match(expr, pos)
        if m is None:
            raise BadPredicate(expr, f"unexpected input at column {pos}")
        name = m.group(1)
        steps.append(WILDCARD if name == "*" else name)
        pos = m.end()
    return PathMatcher(expr, tuple(steps))
