"""Hash and signature primitives.

The default signature backend is a seeded mock built from keyed SHA-256, so
every simulation is bit-reproducible. An Ed25519 backend (``external``) is
available for runs that want a real asymmetric scheme; Ed25519 signing is
deterministic as well, so swapping backends does not break reproducibility.

The mock scheme is not secure: the verification key is also the MAC key.
"""

from __future__ import annotations

import enum
import hashlib
import hmac
import struct
from abc import ABC, abstractmethod
from dataclasses import dataclass

DIGEST_SIZE = 32
ZERO_DIGEST = bytes(DIGEST_SIZE)


class SchemeId(enum.IntEnum):
    MOCK = 0
    EXTERNAL = 1


class SigningKeyUnavailable(ValueError):
    def __init__(self) -> None:
        super().__init__("signing key unavailable")


def hash(data: bytes) -> bytes:  # noqa: A001 - mirrors the domain vocabulary
    """SHA-256 digest of ``data`` (32 bytes)."""
    return hashlib.sha256(data).digest()


def derive_seed(seed: int, *labels: object) -> int:
    """Mix ``seed`` with labels into an independent 64-bit seed."""
    h = hashlib.sha256(struct.pack(">Q", seed & 0xFFFFFFFFFFFFFFFF))
    for label in labels:
        h.update(b"\x00" + str(label).encode())
    return int.from_bytes(h.digest()[:8], "big")


@dataclass(frozen=True)
class KeyPair:
    public_key: bytes
    private_key: bytes | None
    scheme_id: SchemeId = SchemeId.MOCK

    def public_only(self) -> KeyPair:
        return KeyPair(self.public_key, None, self.scheme_id)


@dataclass(frozen=True)
class Signature:
    value: bytes
    scheme_id: SchemeId = SchemeId.MOCK


class SignatureScheme(ABC):
    scheme_id: SchemeId

    @abstractmethod
    def generate_keypair(self, seed: int) -> KeyPair: ...

    @abstractmethod
    def sign(self, key: KeyPair, message: bytes) -> Signature: ...

    @abstractmethod
    def verify(self, public_key: bytes, message: bytes, signature: Signature) -> bool: ...


class MockScheme(SignatureScheme):
    """Keyed-hash stand-in for a signature scheme."""

    scheme_id = SchemeId.MOCK

    def generate_keypair(self, seed: int) -> KeyPair:
        private = hash(b"mock-private" + struct.pack(">Q", seed & 0xFFFFFFFFFFFFFFFF))
        public = hash(b"mock-public" + private)
        return KeyPair(public, private, self.scheme_id)

    def sign(self, key: KeyPair, message: bytes) -> Signature:
        if not key.private_key:
            raise SigningKeyUnavailable()
        tag = hmac.new(key.public_key, message, hashlib.sha256).digest()
        return Signature(tag, self.scheme_id)

    def verify(self, public_key: bytes, message: bytes, signature: Signature) -> bool:
        if len(signature.value) != DIGEST_SIZE:
            return False
        expected = hmac.new(public_key, message, hashlib.sha256).digest()
        return hmac.compare_digest(expected, signature.value)


class Ed25519Scheme(SignatureScheme):
    scheme_id = SchemeId.EXTERNAL

    def generate_keypair(self, seed: int) -> KeyPair:
        from cryptography.hazmat.primitives import serialization
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

        raw = hash(b"ed25519-seed" + struct.pack(">Q", seed & 0xFFFFFFFFFFFFFFFF))
        sk = Ed25519PrivateKey.from_private_bytes(raw)
        pk = sk.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )
        return KeyPair(pk, raw, self.scheme_id)

    def sign(self, key: KeyPair, message: bytes) -> Signature:
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

        if not key.private_key:
            raise SigningKeyUnavailable()
        sk = Ed25519PrivateKey.from_private_bytes(key.private_key)
        return Signature(sk.sign(message), self.scheme_id)

    def verify(self, public_key: bytes, message: bytes, signature: Signature) -> bool:
        from cryptography.exceptions import InvalidSignature
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey

        try:
            Ed25519PublicKey.from_public_bytes(public_key).verify(signature.value, message)
        except (InvalidSignature, ValueError):
            return False
        return True


SCHEMES: dict[SchemeId, SignatureScheme] = {
    SchemeId.MOCK: MockScheme(),
    SchemeId.EXTERNAL: Ed25519Scheme(),
}


def generate_keypair(seed: int, scheme: SchemeId = SchemeId.MOCK) -> KeyPair:
    return SCHEMES[SchemeId(scheme)].generate_keypair(seed)


def sign(key: KeyPair, message: bytes) -> Signature:
    return SCHEMES[key.scheme_id].sign(key, message)


def verify(public_key: bytes, message: bytes, signature: Signature) -> bool:
    """True iff ``signature`` was made over ``message`` by the key behind ``public_key``.

    Malformed or foreign-scheme signatures yield False rather than raising.
    """
    try:
        scheme = SCHEMES[SchemeId(signature.scheme_id)]
    except (ValueError, KeyError):
        return False
    return scheme.verify(public_key, message, signature)
