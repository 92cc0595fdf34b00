"""Encrypted-at-rest wallet files.

The secret key is sealed with AES-GCM under a scrypt-derived key, so a wrong
passphrase fails authentication instead of yielding garbage key material.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.scrypt import Scrypt

from .crypto import KeyPair, b58encode, generate_keys

SCRYPT_N = 2**14
SCRYPT_R = 8
SCRYPT_P = 1


class WalletError(Exception):
    pass


def _derive_key(passphrase: str, salt: bytes, n: int, r: int, p: int) -> bytes:
    kdf = Scrypt(salt=salt, length=32, n=n, r=r, p=p)
    return kdf.derive(passphrase.encode())


def create_wallet(path: str | Path, passphrase: str,
                  seed: bytes | None = None) -> KeyPair:
    """Generate a keypair and write the encrypted wallet file."""
    keypair = generate_keys(seed)
    salt = os.urandom(16)
    nonce = os.urandom(12)
    key = _derive_key(passphrase, salt, SCRYPT_N, SCRYPT_R, SCRYPT_P)
    ciphertext = AESGCM(key).encrypt(nonce, keypair.secret_key, b"votechain-wallet")
    doc = {
        "version": 1,
        "kdf": {"name": "scrypt", "salt": salt.hex(),
                "n": SCRYPT_N, "r": SCRYPT_R, "p": SCRYPT_P},
        "cipher": {"name": "aes-256-gcm", "nonce": nonce.hex(),
                   "ciphertext": ciphertext.hex()},
        "public_key": b58encode(keypair.public_key),
        "address": str(keypair.address),
    }
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2))
    try:
        path.chmod(0o600)
    except OSError:
        pass
    return keypair


def load_wallet(path: str | Path, passphrase: str) -> KeyPair:
    """Decrypt a wallet file; wrong passphrases never yield a usable key."""
    path = Path(path)
    if not path.exists():
        raise WalletError(f"no wallet file at {path}")
    try:
        doc = json.loads(path.read_text())
        kdf = doc["kdf"]
        cipher = doc["cipher"]
        key = _derive_key(passphrase, bytes.fromhex(kdf["salt"]),
                          kdf["n"], kdf["r"], kdf["p"])
        secret = AESGCM(key).decrypt(bytes.fromhex(cipher["nonce"]),
                                     bytes.fromhex(cipher["ciphertext"]),
                                     b"votechain-wallet")
    except InvalidTag:
        raise WalletError("wrong passphrase") from None
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise WalletError(f"corrupt wallet file: {exc}") from None
    keypair = generate_keys(secret)
    if str(keypair.address) != doc.get("address"):
        raise WalletError("wallet file address does not match its key")
    return keypair


def wallet_address(path: str | Path) -> str:
    """Read the public address without decrypting."""
    try:
        return json.loads(Path(path).read_text())["address"]
    except (OSError, KeyError, ValueError) as exc:
        raise WalletError(f"corrupt wallet file: {exc}") from None
