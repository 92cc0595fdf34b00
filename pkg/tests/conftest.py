import json
from pathlib import Path

import pytest

from votechain.crypto import generate_keys, hash256

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def ed25519_vectors():
    return json.loads((FIXTURES / "ed25519_vectors.json").read_text())


def keypair(label: str):
    """Deterministic test keypair from a short label."""
    return generate_keys(hash256(b"test-key:" + label.encode()))


@pytest.fixture
def alice():
    return keypair("alice")


@pytest.fixture
def bob():
    return keypair("bob")


@pytest.fixture
def carol():
    return keypair("carol")
