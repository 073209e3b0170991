"""Client and server-side cryptography for the SUM, PRE and SEARCH transformations."""

from objguard.crypto.group import from_b64, to_b64
from objguard.crypto.hom import (
    DEFAULT_BOUND,
    FIRST_LEVEL,
    SECOND_LEVEL,
    HomCiphertext,
    HomKeyPair,
    HomPublicKey,
    ReEncToken,
    decrypt_any,
    hom_add,
    hom_decrypt,
    hom_encrypt,
    hom_keygen,
    pre_decrypt,
    pre_reencrypt,
    pre_token,
    public_key_of,
)
from objguard.crypto.peks import (
    PeksKeyPair,
    PeksPublicKey,
    SearchCiphertext,
    Trapdoor,
    peks_encrypt,
    peks_keygen,
    peks_test,
    peks_trapdoor,
)

__all__ = [
    "DEFAULT_BOUND",
    "FIRST_LEVEL",
    "SECOND_LEVEL",
    "HomCiphertext",
    "HomKeyPair",
    "HomPublicKey",
    "PeksKeyPair",
    "PeksPublicKey",
    "ReEncToken",
    "SearchCiphertext",
    "Trapdoor",
    "decrypt_any",
    "from_b64",
    "hom_add",
    "hom_decrypt",
    "hom_encrypt",
    "hom_keygen",
    "peks_encrypt",
    "peks_keygen",
    "peks_test",
    "peks_trapdoor",
    "pre_decrypt",
    "pre_reencrypt",
    "pre_token",
    "public_key_of",
    "to_b64",
]
