"""Multi-user, multi-keyword public-key encryption with keyword search.

A conjunctive keyword scheme in the style of Hwang and Lee, adapted to an
asymmetric pairing. User key ``x`` with public key ``y = x*P2``. Two
independent hash-to-G1 maps ``h`` and ``f`` are domain separated.

Encrypting keywords ``w_1..w_l`` for users ``y_1..y_n`` with fresh ``r, s``::

    A   = r*P2
    B_j = s*y_j                      (one per user)
    C_i = r*h(w_i) + s*f(w_i)        (one per keyword)

which is ``n + l + 1`` group elements. A trapdoor for a keyword set W' of
size m, with fresh ``t``::

    T1 = t*P2     T2 = t*sum h(w)     T3 = (t/x)*sum f(w)

Test succeeds for user j when, for some m-subset I of keyword positions,
``e(sum_{i in I} C_i, T1) == e(T2, A) * e(T3, B_j)``.
"""

from __future__ import annotations

import functools
import itertools
import random
from dataclasses import dataclass
from typing import Iterable, Sequence

from mclbn256 import G1, G2, Fr

from objguard.crypto.group import (
    PEKS_KEY_PAIR,
    PEKS_PUBLIC_KEY,
    SEARCH_CIPHERTEXT,
    TRAPDOOR,
    Encoded,
    dec_fr,
    dec_g1,
    dec_g2,
    fingerprint,
    g2_generator,
    hash_to_g1,
    pack,
    random_scalar,
    unpack,
)
from objguard.errors import MalformedCiphertext

_H = b"objguard/peks/h"
_F = b"objguard/peks/f"

# upper bound on subsets examined by one test; guards against huge keyword lists
MAX_SUBSETS = 4096


@functools.lru_cache(maxsize=1024)
def _h(word: str) -> G1:
    return hash_to_g1(_H, word)


@functools.lru_cache(maxsize=1024)
def _f(word: str) -> G1:
    return hash_to_g1(_F, word)


def _sum(points: Iterable[G1]) -> G1:
    it = iter(points)
    acc = next(it)
    for p in it:
        acc = acc + p
    return acc


@dataclass(frozen=True, eq=False)
class PeksPublicKey(Encoded):
    y: G2

    @property
    def key_id(self) -> str:
        return fingerprint(b"peks", self.y.serialize())

    def to_bytes(self) -> bytes:
        return pack(PEKS_PUBLIC_KEY, [self.y.serialize()])

    @classmethod
    def from_bytes(cls, data: bytes) -> "PeksPublicKey":
        parts = unpack(data, PEKS_PUBLIC_KEY)
        if len(parts) != 1:
            raise MalformedCiphertext("PEKS public key needs 1 component", 2)
        return cls(dec_g2(*parts[0]))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, PeksPublicKey) and self.to_bytes() == other.to_bytes()

    def __hash__(self) -> int:
        return hash(self.to_bytes())


@dataclass(frozen=True, eq=False)
class PeksKeyPair(Encoded):
    sk: Fr
    pk: PeksPublicKey

    @property
    def key_id(self) -> str:
        return self.pk.key_id

    def to_bytes(self) -> bytes:
        return pack(PEKS_KEY_PAIR, [self.sk.serialize(), self.pk.to_bytes()])

    @classmethod
    def from_bytes(cls, data: bytes) -> "PeksKeyPair":
        parts = unpack(data, PEKS_KEY_PAIR)
        if len(parts) != 2:
            raise MalformedCiphertext("PEKS key pair needs 2 components", 2)
        sk = dec_fr(*parts[0])
        pk = PeksPublicKey.from_bytes(parts[1][0])
        if PeksPublicKey(g2_generator() * sk) != pk:
            raise MalformedCiphertext("public key does not match secret", parts[1][1])
        return cls(sk, pk)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, PeksKeyPair) and self.to_bytes() == other.to_bytes()

    def __hash__(self) -> int:
        return hash(self.to_bytes())


@dataclass(frozen=True, eq=False)
class SearchCiphertext(Encoded):
    """Group elements ``A``, ``B`` (per user) and ``C`` (per keyword).

    ``key_ids`` is encoding metadata: it tells the tester which ``B_j``
    belongs to which user.
    """

    a: G2
    b: tuple[G2, ...]
    c: tuple[G1, ...]
    key_ids: tuple[str, ...]

    @property
    def n_users(self) -> int:
        return len(self.b)

    @property
    def n_keywords(self) -> int:
        return len(self.c)

    @property
    def components(self) -> int:
        return 1 + len(self.b) + len(self.c)

    def to_bytes(self) -> bytes:
        head = [len(self.b).to_bytes(2, "big"), len(self.c).to_bytes(2, "big")]
        return pack(
            SEARCH_CIPHERTEXT,
            head
            + [k.encode() for k in self.key_ids]
            + [self.a.serialize()]
            + [p.serialize() for p in self.b]
            + [p.serialize() for p in self.c],
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "SearchCiphertext":
        parts = unpack(data, SEARCH_CIPHERTEXT)
        if len(parts) < 3 or len(parts[0][0]) != 2 or len(parts[1][0]) != 2:
            raise MalformedCiphertext("bad search ciphertext header", 4)
        n = int.from_bytes(parts[0][0], "big")
        ell = int.from_bytes(parts[1][0], "big")
        if n < 1 or ell < 1 or len(parts) != 2 + n + 1 + n + ell:
            raise MalformedCiphertext("search ciphertext component count mismatch", 4)
        ids = tuple(p.decode("ascii", "replace") for p, _ in parts[2 : 2 + n])
        rest = parts[2 + n :]
        a = dec_g2(*rest[0])
        b = tuple(dec_g2(*p) for p in rest[1 : 1 + n])
        c = tuple(dec_g1(*p) for p in rest[1 + n :])
        return cls(a, b, c, ids)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, SearchCiphertext) and self.to_bytes() == other.to_bytes()

    def __hash__(self) -> int:
        return hash(self.to_bytes())


@dataclass(frozen=True, eq=False)
class Trapdoor(Encoded):
    key_id: str
    size: int
    t1: G2
    t2: G1
    t3: G1

    def to_bytes(self) -> bytes:
        return pack(
            TRAPDOOR,
            [
                self.key_id.encode(),
                self.size.to_bytes(2, "big"),
                self.t1.serialize(),
                self.t2.serialize(),
                self.t3.serialize(),
            ],
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "Trapdoor":
        parts = unpack(data, TRAPDOOR)
        if len(parts) != 5 or len(parts[1][0]) != 2:
            raise MalformedCiphertext("trapdoor needs 5 components", 2)
        size = int.from_bytes(parts[1][0], "big")
        if size < 1:
            raise MalformedCiphertext("empty trapdoor", parts[1][1])
        return cls(parts[0][0].decode("ascii", "replace"), size, dec_g2(*parts[2]), dec_g1(*parts[3]), dec_g1(*parts[4]))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Trapdoor) and self.to_bytes() == other.to_bytes()

    def __hash__(self) -> int:
        return hash(self.to_bytes())


def peks_keygen(rng: random.Random | None = None) -> PeksKeyPair:
    x = random_scalar(rng)
    return PeksKeyPair(x, PeksPublicKey(g2_generator() * x))


def _keywords(words: Iterable[str]) -> list[str]:
    out = list(dict.fromkeys(words))
    if not out:
        raise ValueError("at least one keyword is required")
    for w in out:
        if not isinstance(w, str):
            raise TypeError(f"keywords must be strings, got {w!r}")
    return out


def peks_encrypt(
    pks: Sequence[PeksPublicKey], words: Iterable[str], rng: random.Random | None = None
) -> SearchCiphertext:
    """Encrypt keyword list ``words`` (duplicates collapse) for users ``pks``."""
    if not pks:
        raise ValueError("at least one recipient key is required")
    ws = _keywords(words)
    r = random_scalar(rng)
    s = random_scalar(rng)
    a = g2_generator() * r
    b = tuple(pk.y * s for pk in pks)
    c = tuple(_h(w) * r + _f(w) * s for w in ws)
    return SearchCiphertext(a, b, c, tuple(pk.key_id for pk in pks))


def peks_trapdoor(key: PeksKeyPair, words: Iterable[str], rng: random.Random | None = None) -> Trapdoor:
    ws = _keywords(words)
    t = random_scalar(rng)
    t1 = g2_generator() * t
    t2 = _sum(_h(w) for w in ws) * t
    t3 = _sum(_f(w) for w in ws) * (t / key.sk)
    return Trapdoor(key.key_id, len(ws), t1, t2, t3)


def peks_test(pk: PeksPublicKey, trapdoor: Trapdoor, ct: SearchCiphertext) -> bool:
    """True iff the trapdoor's keywords all occur in ``ct`` and ``pk`` may search it."""
    if trapdoor.key_id != pk.key_id:
        return False
    try:
        j = ct.key_ids.index(pk.key_id)
    except ValueError:
        return False
    if trapdoor.size > ct.n_keywords:
        return False
    rhs = trapdoor.t2.pairing(ct.a) * trapdoor.t3.pairing(ct.b[j])
    for n, subset in enumerate(itertools.combinations(ct.c, trapdoor.size)):
        if n >= MAX_SUBSETS:
            break
        if _sum(subset).pairing(trapdoor.t1) == rhs:
            return True
    return False
