"""Pairing-group helpers and the versioned binary codec shared by all crypto types.

The group is BN254 (type-3 pairing e: G1 x G2 -> GT) as provided by the
``mclbn256`` bindings. Every key, ciphertext, token and trapdoor is encoded
as::

    version:u8  kind:u8  count:u16  (length:u32  bytes){count}

big-endian, so that truncated or foreign blobs are rejected with an offset.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import random
import secrets
import struct
from typing import Any, Sequence

from mclbn256 import G1, G2, GT, Fr

from objguard.errors import MalformedCiphertext

ORDER = 0x2523648240000001BA344D8000000007FF9F800000000010A10000000000000D
FORMAT_VERSION = 1

G1_BYTES = 32
G2_BYTES = 64
GT_BYTES = 384
FR_BYTES = 32

# kind tags for the codec
HOM_PUBLIC_KEY = 1
HOM_KEY_PAIR = 2
HOM_CIPHERTEXT = 3
REENC_TOKEN = 4
PEKS_PUBLIC_KEY = 5
PEKS_KEY_PAIR = 6
SEARCH_CIPHERTEXT = 7
TRAPDOOR = 8

_G1 = G1.base_point()
_G2 = G2.base_point()
_GT = _G1.pairing(_G2)


def g1_generator() -> G1:
    return _G1


def g2_generator() -> G2:
    return _G2


def gt_generator() -> GT:
    return _GT


def fr(value: int) -> Fr:
    """Scalar from a Python int, reduced modulo the group order."""
    return Fr.deserialize((value % ORDER).to_bytes(FR_BYTES, "little"))


def random_scalar(rng: random.Random | None = None) -> Fr:
    """Non-zero scalar; ``rng`` gives reproducible draws, otherwise the OS CSPRNG."""
    while True:
        v = rng.getrandbits(256) % ORDER if rng is not None else secrets.randbelow(ORDER)
        if v:
            return fr(v)


def scalar_int(x: Fr) -> int:
    return int.from_bytes(x.serialize(), "little")


def hash_to_g1(domain: bytes, data: bytes | str) -> G1:
    if isinstance(data, str):
        data = data.encode()
    digest = hashlib.sha256(domain + b"\x00" + data).digest()
    return G1().hash(digest)


def fingerprint(*parts: bytes) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(struct.pack(">I", len(p)))
        h.update(p)
    return h.hexdigest()[:16]


# -- element (de)serialization ------------------------------------------------


def dec_fr(data: bytes, offset: int = 0) -> Fr:
    if len(data) != FR_BYTES or int.from_bytes(data, "little") >= ORDER:
        raise MalformedCiphertext("bad scalar", offset)
    return Fr.deserialize(data)


def dec_g1(data: bytes, offset: int = 0) -> G1:
    if len(data) != G1_BYTES:
        raise MalformedCiphertext("bad G1 length", offset)
    try:
        p = G1.deserialize(data)
    except ValueError:
        raise MalformedCiphertext("bad G1 element", offset) from None
    if not p.valid():
        raise MalformedCiphertext("G1 element not on curve", offset)
    return p


def dec_g2(data: bytes, offset: int = 0) -> G2:
    if len(data) != G2_BYTES:
        raise MalformedCiphertext("bad G2 length", offset)
    try:
        p = G2.deserialize(data)
    except ValueError:
        raise MalformedCiphertext("bad G2 element", offset) from None
    if not p.valid():
        raise MalformedCiphertext("G2 element not on curve", offset)
    return p


def dec_gt(data: bytes, offset: int = 0) -> GT:
    # no cheap subgroup check is exposed for GT; length is validated
    if len(data) != GT_BYTES:
        raise MalformedCiphertext("bad GT length", offset)
    try:
        return GT.deserialize(data)
    except ValueError:
        raise MalformedCiphertext("bad GT element", offset) from None


# -- container codec ------------------------------------------------------------


def pack(kind: int, parts: Sequence[bytes]) -> bytes:
    out = [struct.pack(">BBH", FORMAT_VERSION, kind, len(parts))]
    for p in parts:
        out.append(struct.pack(">I", len(p)))
        out.append(p)
    return b"".join(out)


def unpack(data: bytes, kind: int) -> list[tuple[bytes, int]]:
    """Split an encoded blob into ``(component, offset)`` pairs."""
    if len(data) < 4:
        raise MalformedCiphertext("truncated header", 0)
    version, got_kind, count = struct.unpack_from(">BBH", data, 0)
    if version != FORMAT_VERSION:
        raise MalformedCiphertext(f"unsupported format version {version}", 0)
    if got_kind != kind:
        raise MalformedCiphertext(f"expected kind {kind}, found {got_kind}", 1)
    pos = 4
    parts = []
    for _ in range(count):
        if pos + 4 > len(data):
            raise MalformedCiphertext("truncated length prefix", pos)
        (n,) = struct.unpack_from(">I", data, pos)
        pos += 4
        if pos + n > len(data):
            raise MalformedCiphertext("truncated component", pos)
        parts.append((data[pos : pos + n], pos))
        pos += n
    if pos != len(data):
        raise MalformedCiphertext("trailing bytes", pos)
    return parts


def to_b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def from_b64(text: str | bytes) -> bytes:
    try:
        return base64.b64decode(text, validate=True)
    except (binascii.Error, ValueError):
        raise MalformedCiphertext("invalid base64", 0) from None


class Encoded:
    """Mixin giving ``to_b64``/``from_b64`` on top of ``to_bytes``/``from_bytes``."""

    def to_b64(self) -> str:
        return to_b64(self.to_bytes())  # type: ignore[attr-defined]

    @classmethod
    def from_b64(cls, text: str | bytes) -> Any:
        return cls.from_bytes(from_b64(text))  # type: ignore[attr-defined]
