"""Keys, signatures, hashing and base-58 addresses.

Signing is Ed25519 (32-byte public keys, 64-byte signatures, deterministic),
the protocol hash is SHA-256, and addresses are version byte + 20-byte key
hash + 4-byte checksum rendered in base-58.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

KEY_LENGTH = 32
SIGNATURE_LENGTH = 64
ADDRESS_VERSION = 0x01
ADDRESS_PAYLOAD_LENGTH = 20
ADDRESS_CHECKSUM_LENGTH = 4
ADDRESS_LENGTH = 1 + ADDRESS_PAYLOAD_LENGTH + ADDRESS_CHECKSUM_LENGTH

_RAW = serialization.Encoding.Raw
_RAW_FMT = serialization.PublicFormat.Raw


class MalformedSeed(ValueError):
    """Seed supplied to generate_keys is not exactly 32 bytes."""


class MalformedKey(ValueError):
    """Public key is not a valid 32-byte Ed25519 key."""


def hash256(data: bytes) -> bytes:
    """Protocol hash: SHA-256, 32-byte digest."""
    return hashlib.sha256(data).digest()


@dataclass(frozen=True)
class KeyPair:
    secret_key: bytes  # 32-byte Ed25519 seed
    public_key: bytes  # 32-byte verification key

    def __post_init__(self):
        if len(self.secret_key) != KEY_LENGTH or len(self.public_key) != KEY_LENGTH:
            raise MalformedKey("key material must be 32 bytes")

    @property
    def address(self) -> "Address":
        return derive_address(self.public_key)


def generate_keys(seed: bytes | None = None) -> KeyPair:
    """Generate a keypair; the same 32-byte seed always yields the same pair.

    Without a seed, 32 bytes of OS entropy are drawn.
    """
    if seed is None:
        seed = os.urandom(KEY_LENGTH)
    elif len(seed) != KEY_LENGTH:
        raise MalformedSeed(f"seed must be {KEY_LENGTH} bytes, got {len(seed)}")
    sk = Ed25519PrivateKey.from_private_bytes(seed)
    pk = sk.public_key().public_bytes(_RAW, _RAW_FMT)
    return KeyPair(secret_key=seed, public_key=pk)


def sign(secret_key: bytes, message: bytes) -> bytes:
    """Sign a message; returns the 64-byte signature."""
    if len(secret_key) != KEY_LENGTH:
        raise MalformedKey("secret key must be 32 bytes")
    return Ed25519PrivateKey.from_private_bytes(secret_key).sign(message)


def verify(public_key: bytes, message: bytes, signature: bytes) -> bool:
    """True iff signature is valid for message under public_key.

    Deterministic, and never raises: malformed keys or signatures return False.
    """
    if len(public_key) != KEY_LENGTH or len(signature) != SIGNATURE_LENGTH:
        return False
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
        return True
    except (InvalidSignature, ValueError):
        return False


# --- base-58 (Bitcoin alphabet: no 0, O, I, l) ---

B58_ALPHABET = "123456789ABCDEFGHJKLMNPQRSTUVWXYZabcdefghijkmnopqrstuvwxyz"
_B58_INDEX = {c: i for i, c in enumerate(B58_ALPHABET)}


def b58encode(data: bytes) -> str:
    n = int.from_bytes(data, "big")
    out = []
    while n > 0:
        n, rem = divmod(n, 58)
        out.append(B58_ALPHABET[rem])
    # Leading zero bytes map to leading '1's
    pad = 0
    for b in data:
        if b == 0:
            pad += 1
        else:
            break
    return "1" * pad + "".join(reversed(out))


def b58decode(text: str) -> bytes:
    n = 0
    for c in text:
        if c not in _B58_INDEX:
            raise ValueError(f"invalid base-58 character {c!r}")
        n = n * 58 + _B58_INDEX[c]
    raw = n.to_bytes((n.bit_length() + 7) // 8, "big")
    pad = 0
    for c in text:
        if c == "1":
            pad += 1
        else:
            break
    return b"\x00" * pad + raw


@dataclass(frozen=True)
class Address:
    """25-byte chain address: version(1) | key-hash(20) | checksum(4)."""

    raw: bytes

    def __post_init__(self):
        if len(self.raw) != ADDRESS_LENGTH:
            raise ValueError(f"address must be {ADDRESS_LENGTH} bytes")

    def __str__(self) -> str:
        return b58encode(self.raw)

    def __bytes__(self) -> bytes:
        return self.raw

    @property
    def version(self) -> int:
        return self.raw[0]

    @property
    def payload(self) -> bytes:
        return self.raw[1 : 1 + ADDRESS_PAYLOAD_LENGTH]

    @property
    def checksum(self) -> bytes:
        return self.raw[-ADDRESS_CHECKSUM_LENGTH:]


def _address_from_payload(payload: bytes) -> Address:
    body = bytes([ADDRESS_VERSION]) + payload
    return Address(body + hash256(body)[:ADDRESS_CHECKSUM_LENGTH])


def derive_address(public_key: bytes) -> Address:
    """Address for a public key: payload is the first 20 bytes of its hash."""
    if len(public_key) != KEY_LENGTH:
        raise MalformedKey("public key must be 32 bytes")
    return _address_from_payload(hash256(public_key)[:ADDRESS_PAYLOAD_LENGTH])


def address_from_hash(digest: bytes) -> Address:
    """Address for a 32-byte hash (poll and answer addresses)."""
    if len(digest) != 32:
        raise ValueError("expected a 32-byte digest")
    return _address_from_payload(digest[:ADDRESS_PAYLOAD_LENGTH])


def decode_address(text_or_raw: str | bytes) -> Address:
    """Parse and checksum-verify an address from base-58 text or raw bytes."""
    raw = b58decode(text_or_raw) if isinstance(text_or_raw, str) else bytes(text_or_raw)
    if len(raw) != ADDRESS_LENGTH:
        raise ValueError("address must decode to 25 bytes")
    if raw[0] != ADDRESS_VERSION:
        raise ValueError(f"unknown address version {raw[0]}")
    body, checksum = raw[:-ADDRESS_CHECKSUM_LENGTH], raw[-ADDRESS_CHECKSUM_LENGTH:]
    if hash256(body)[:ADDRESS_CHECKSUM_LENGTH] != checksum:
        raise ValueError("address checksum mismatch")
    return Address(raw)


def is_valid_address(text: str) -> bool:
    try:
        decode_address(text)
        return True
    except ValueError:
        return False
