"""Additively homomorphic encryption with single-hop proxy re-encryption.

Plaintexts live in the exponent. A user key is a scalar ``a`` with public
key ``(a*P1, a*P2)``.

* second level (owner-encrypted, re-encryptable), in G1::

      c1 = r*a*P1          c2 = (m + r)*P1

  the owner recovers ``m*P1 = c2 - c1/a``.

* re-encryption token owner a -> receiver b, in G2: ``(b/a)*P2``.

* first level (receiver-encrypted, terminal), in GT with Z = e(P1, P2)::

      d1 = e(c1, token) = Z^(r*b)      d2 = e(c2, P2) = Z^(m + r)

  the receiver recovers ``Z^m = d2 / d1^(1/b)``.

Both levels add component-wise. Decryption ends with a bounded discrete log,
so callers pass the largest plaintext they expect.

Known limitation: a token holder colluding with the receiver learns
``(1/a)*P2``, enough to open the owner's second-level ciphertexts. The
scheme is a reference construction, not a hardened one.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Any, Union

from mclbn256 import G1, G2, GT, Fr

from objguard.crypto import dlog
from objguard.crypto.group import (
    HOM_CIPHERTEXT,
    Encoded,
    HOM_KEY_PAIR,
    HOM_PUBLIC_KEY,
    REENC_TOKEN,
    dec_fr,
    dec_g1,
    dec_g2,
    dec_gt,
    fingerprint,
    fr,
    g1_generator,
    g2_generator,
    pack,
    random_scalar,
    unpack,
)
from objguard.errors import KeyMismatch, LevelMismatch, MalformedCiphertext, PlaintextOutOfRange

DEFAULT_BOUND = 1 << 32

SECOND_LEVEL = 2
FIRST_LEVEL = 1


@dataclass(frozen=True, eq=False)
class HomPublicKey(Encoded):
    p1: G1
    p2: G2

    @property
    def key_id(self) -> str:
        return fingerprint(self.p1.serialize(), self.p2.serialize())

    def to_bytes(self) -> bytes:
        return pack(HOM_PUBLIC_KEY, [self.p1.serialize(), self.p2.serialize()])

    @classmethod
    def from_bytes(cls, data: bytes) -> "HomPublicKey":
        parts = unpack(data, HOM_PUBLIC_KEY)
        if len(parts) != 2:
            raise MalformedCiphertext("public key needs 2 components", 2)
        return cls(dec_g1(*parts[0]), dec_g2(*parts[1]))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, HomPublicKey) and self.to_bytes() == other.to_bytes()

    def __hash__(self) -> int:
        return hash(self.to_bytes())


@dataclass(frozen=True, eq=False)
class HomKeyPair(Encoded):
    sk: Fr
    pk: HomPublicKey

    @property
    def key_id(self) -> str:
        return self.pk.key_id

    def to_bytes(self) -> bytes:
        return pack(HOM_KEY_PAIR, [self.sk.serialize(), self.pk.to_bytes()])

    @classmethod
    def from_bytes(cls, data: bytes) -> "HomKeyPair":
        parts = unpack(data, HOM_KEY_PAIR)
        if len(parts) != 2:
            raise MalformedCiphertext("key pair needs 2 components", 2)
        sk = dec_fr(*parts[0])
        pk = HomPublicKey.from_bytes(parts[1][0])
        if public_key_of(sk) != pk:
            raise MalformedCiphertext("public key does not match secret", parts[1][1])
        return cls(sk, pk)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, HomKeyPair) and self.to_bytes() == other.to_bytes()

    def __hash__(self) -> int:
        return hash(self.to_bytes())


@dataclass(frozen=True, eq=False)
class HomCiphertext(Encoded):
    """``level`` is SECOND_LEVEL (G1 components) or FIRST_LEVEL (GT components)."""

    level: int
    key_id: str
    c1: Union[G1, GT]
    c2: Union[G1, GT]

    def to_bytes(self) -> bytes:
        return pack(
            HOM_CIPHERTEXT,
            [bytes([self.level]), self.key_id.encode(), self.c1.serialize(), self.c2.serialize()],
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "HomCiphertext":
        parts = unpack(data, HOM_CIPHERTEXT)
        if len(parts) != 4:
            raise MalformedCiphertext("ciphertext needs 4 components", 2)
        (lv, lv_off), (kid, _), c1, c2 = parts
        if lv not in (bytes([SECOND_LEVEL]), bytes([FIRST_LEVEL])):
            raise MalformedCiphertext("unknown ciphertext level", lv_off)
        level = lv[0]
        dec = dec_g1 if level == SECOND_LEVEL else dec_gt
        return cls(level, kid.decode("ascii", "replace"), dec(*c1), dec(*c2))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, HomCiphertext) and self.to_bytes() == other.to_bytes()

    def __hash__(self) -> int:
        return hash(self.to_bytes())


@dataclass(frozen=True, eq=False)
class ReEncToken(Encoded):
    owner_id: str
    receiver_id: str
    element: G2

    def to_bytes(self) -> bytes:
        return pack(
            REENC_TOKEN,
            [self.owner_id.encode(), self.receiver_id.encode(), self.element.serialize()],
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "ReEncToken":
        parts = unpack(data, REENC_TOKEN)
        if len(parts) != 3:
            raise MalformedCiphertext("token needs 3 components", 2)
        return cls(parts[0][0].decode("ascii", "replace"), parts[1][0].decode("ascii", "replace"), dec_g2(*parts[2]))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ReEncToken) and self.to_bytes() == other.to_bytes()

    def __hash__(self) -> int:
        return hash(self.to_bytes())


def public_key_of(sk: Fr) -> HomPublicKey:
    return HomPublicKey(g1_generator() * sk, g2_generator() * sk)


def hom_keygen(rng: random.Random | None = None) -> HomKeyPair:
    sk = random_scalar(rng)
    return HomKeyPair(sk, public_key_of(sk))


def _check_plaintext(m: int, bound: int) -> None:
    if isinstance(m, bool) or not isinstance(m, int) or not 0 <= m < bound:
        raise PlaintextOutOfRange(f"plaintext {m!r} outside [0, {bound})")


def hom_encrypt(
    pk: HomPublicKey, m: int, bound: int = DEFAULT_BOUND, rng: random.Random | None = None
) -> HomCiphertext:
    _check_plaintext(m, bound)
    r = random_scalar(rng)
    c1 = pk.p1 * r
    c2 = g1_generator() * (fr(m) + r)
    return HomCiphertext(SECOND_LEVEL, pk.key_id, c1, c2)


def hom_add(a: HomCiphertext, b: HomCiphertext) -> HomCiphertext:
    if a.level != b.level:
        raise LevelMismatch(f"cannot add level {a.level} to level {b.level}")
    if a.key_id != b.key_id:
        raise KeyMismatch(f"ciphertexts under different keys ({a.key_id} vs {b.key_id})")
    if a.level == SECOND_LEVEL:
        return HomCiphertext(a.level, a.key_id, a.c1 + b.c1, a.c2 + b.c2)
    return HomCiphertext(a.level, a.key_id, a.c1 * b.c1, a.c2 * b.c2)


def hom_decrypt(key: HomKeyPair, c: HomCiphertext, bound: int = DEFAULT_BOUND) -> int:
    """Owner decryption of a second-level ciphertext."""
    if c.level != SECOND_LEVEL:
        raise LevelMismatch("owner decryption needs a second-level ciphertext; use pre_decrypt")
    if c.key_id != key.key_id:
        raise KeyMismatch(f"ciphertext is under key {c.key_id}, not {key.key_id}")
    inv = Fr(1) / key.sk
    mp = c.c2 - c.c1 * inv
    return dlog.dlog_g1(mp, bound)


def pre_token(owner: HomKeyPair, receiver: HomPublicKey) -> ReEncToken:
    """Token for re-encrypting ``owner``'s ciphertexts to ``receiver`` only."""
    inv = Fr(1) / owner.sk
    return ReEncToken(owner.key_id, receiver.key_id, receiver.p2 * inv)


def pre_reencrypt(token: ReEncToken, c: HomCiphertext) -> HomCiphertext:
    if c.level != SECOND_LEVEL:
        raise LevelMismatch("only second-level ciphertexts can be re-encrypted")
    if c.key_id != token.owner_id:
        raise KeyMismatch(f"token is for owner {token.owner_id}, ciphertext under {c.key_id}")
    d1 = c.c1.pairing(token.element)
    d2 = c.c2.pairing(g2_generator())
    return HomCiphertext(FIRST_LEVEL, token.receiver_id, d1, d2)


def pre_decrypt(receiver: HomKeyPair, c: HomCiphertext, bound: int = DEFAULT_BOUND) -> int:
    if c.level != FIRST_LEVEL:
        raise LevelMismatch("receiver decryption needs a first-level ciphertext")
    if c.key_id != receiver.key_id:
        raise KeyMismatch(f"ciphertext is for {c.key_id}, not {receiver.key_id}")
    inv = Fr(1) / receiver.sk
    zm = c.c2 / (c.c1 ** inv)
    return dlog.dlog_gt(zm, bound)


def decrypt_any(key: HomKeyPair, c: HomCiphertext, bound: int = DEFAULT_BOUND) -> int:
    """Decrypt at whichever level ``c`` is, as the holder of ``key``."""
    if c.level == FIRST_LEVEL:
        return pre_decrypt(key, c, bound)
    return hom_decrypt(key, c, bound)
