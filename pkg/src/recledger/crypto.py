"""SHA-256 digests and Ed25519 signing keys.

Simulation keys are derived deterministically from the participant id so that
runs, exported chains and test vectors are reproducible. They are not secret.
"""

from __future__ import annotations

import hashlib
from functools import lru_cache

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

DIGEST_SIZE = 32
ZERO_DIGEST = bytes(DIGEST_SIZE)


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


class SigningKey:
    def __init__(self, seed: bytes):
        self._key = Ed25519PrivateKey.from_private_bytes(seed)
        self.public_key = self._key.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )

    def sign(self, message: bytes) -> bytes:
        return self._key.sign(message)


@lru_cache(maxsize=None)
def key_for(participant_id: str) -> SigningKey:
    """Deterministic key pair for a simulated participant."""
    return SigningKey(sha256(b"recledger-sim-key:" + participant_id.encode("utf-8")))


@lru_cache(maxsize=1 << 16)
def verify(public_key: bytes, message: bytes, signature: bytes) -> bool:
    if len(public_key) != 32 or len(signature) != 64:
        return False
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True
