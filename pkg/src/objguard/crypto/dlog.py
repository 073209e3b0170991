"""Bounded discrete logarithms by baby-step/giant-step.

The baby-step table maps an 8-byte prefix of ``j*g`` to ``j`` for
``j < 2**table_bits``. It is stored as two sorted numpy arrays, built once
per process and group, and optionally cached on disk (``OBJGUARD_CACHE``,
default ``~/.cache/objguard``). Giant steps are hashed in batches and looked
up with a vectorized ``searchsorted``; every hit is confirmed by
recomputation, so prefix collisions cannot produce a wrong answer.
"""

from __future__ import annotations

import logging
import os
import threading
from pathlib import Path
from typing import Any, Callable

import numpy as np

from objguard.crypto.group import fr, g1_generator, gt_generator
from objguard.errors import DiscreteLogNotFound

logger = logging.getLogger(__name__)

DEFAULT_TABLE_BITS = 20
BATCH = 64


def _prefix(element: Any) -> int:
    return int.from_bytes(element.serialize()[:8], "little")


class _Group:
    def __init__(self, name: str, generator: Any, op: Callable, inv: Callable, pow_: Callable, identity: Any):
        self.name = name
        self.generator = generator
        self.op = op
        self.inv = inv
        self.pow = pow_
        self.identity = identity


def _g1_group() -> _Group:
    g = g1_generator()
    zero = g * fr(0)
    return _Group("g1", g, lambda a, b: a + b, lambda a: -a, lambda a, k: a * fr(k), zero)


def _gt_group() -> _Group:
    z = gt_generator()
    one = z ** fr(0)
    return _Group("gt", z, lambda a, b: a * b, lambda a: a.inverse(), lambda a, k: a ** fr(k), one)


def _cache_dir() -> Path | None:
    root = os.environ.get("OBJGUARD_CACHE")
    if root == "":
        return None
    path = Path(root) if root else Path.home() / ".cache" / "objguard"
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError:
        return None
    return path


class BabyStepTable:
    def __init__(self, group: _Group, bits: int):
        self.group = group
        self.bits = bits
        self.size = 1 << bits
        self.keys, self.values = self._load_or_build()
        self.giant = group.inv(group.pow(group.generator, self.size))

    def _load_or_build(self) -> tuple[np.ndarray, np.ndarray]:
        cache = _cache_dir()
        path = cache / f"bsgs-{self.group.name}-{self.bits}.npz" if cache else None
        if path is not None and path.exists():
            try:
                with np.load(path) as data:
                    keys, values = data["keys"], data["values"]
                if len(keys) == self.size:
                    return keys, values
            except (OSError, ValueError, KeyError):
                logger.warning("ignoring unreadable baby-step cache %s", path)
        logger.info("building %s baby-step table with 2^%d entries", self.group.name, self.bits)
        keys = np.empty(self.size, dtype=np.uint64)
        cur = self.group.identity
        g = self.group.generator
        op = self.group.op
        for j in range(self.size):
            keys[j] = _prefix(cur)
            cur = op(cur, g)
        order = np.argsort(keys, kind="stable")
        keys = keys[order]
        values = order.astype(np.uint32)
        if path is not None:
            tmp = path.with_suffix(".tmp.npz")
            try:
                np.savez(tmp, keys=keys, values=values)
                os.replace(tmp, path)
            except OSError:
                logger.warning("could not write baby-step cache %s", path)
        return keys, values

    def solve(self, target: Any, bound: int) -> int:
        """Return ``x`` in ``[0, bound)`` with ``x*g == target``."""
        group = self.group
        giants = -(-bound // self.size)
        cur = target
        i = 0
        while i < giants:
            n = min(BATCH, giants - i)
            elems = []
            prefixes = np.empty(n, dtype=np.uint64)
            for k in range(n):
                elems.append(cur)
                prefixes[k] = _prefix(cur)
                cur = group.op(cur, self.giant)
            pos = np.searchsorted(self.keys, prefixes)
            pos[pos >= len(self.keys)] = len(self.keys) - 1
            hits = np.nonzero(self.keys[pos] == prefixes)[0]
            for k in hits:
                p = int(pos[k])
                while p < len(self.keys) and self.keys[p] == prefixes[k]:
                    x = (i + int(k)) * self.size + int(self.values[p])
                    if x < bound and group.pow(group.generator, x) == target:
                        return x
                    p += 1
            i += n
        raise DiscreteLogNotFound(f"no discrete log below {bound}")


_tables: dict[tuple[str, int], BabyStepTable] = {}
_lock = threading.Lock()


def table(name: str, bits: int | None = None) -> BabyStepTable:
    bits = bits or int(os.environ.get("OBJGUARD_BSGS_BITS", DEFAULT_TABLE_BITS))
    key = (name, bits)
    with _lock:
        t = _tables.get(key)
        if t is None:
            t = BabyStepTable(_g1_group() if name == "g1" else _gt_group(), bits)
            _tables[key] = t
    return t


def dlog_g1(target: Any, bound: int) -> int:
    return table("g1").solve(target, bound)


def dlog_gt(target: Any, bound: int) -> int:
    return table("gt").solve(target, bound)
