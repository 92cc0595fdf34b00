"""Shared transaction builders for the test suite."""

from votechain.crypto import derive_address, generate_keys, hash256
from votechain.tx import (
    DataTx,
    IssueTx,
    MinBalance,
    PollCreationTx,
    TransferTx,
    WeightModel,
)

KP = generate_keys(hash256(b"format-sender"))
RECIPIENT = derive_address(generate_keys(hash256(b"format-recipient")).public_key)


def simple_transfer(**overrides):
    fields = dict(sender_pk=KP.public_key, recipient=RECIPIENT, amount=7,
                  fee=1, timestamp=1_690_000_000_000)
    fields.update(overrides)
    return TransferTx(**fields)


def simple_issue(**overrides):
    fields = dict(sender_pk=KP.public_key, name=b"RIGHT", description=b"voting right",
                  quantity=1_000, decimals=0, reissuable=False, fee=1,
                  timestamp=1_690_000_000_000)
    fields.update(overrides)
    return IssueTx(**fields)


def simple_data(**overrides):
    fields = dict(sender_pk=KP.public_key, data=b"hello ledger", fee=1,
                  timestamp=1_690_000_000_000)
    fields.update(overrides)
    return DataTx(**fields)


def simple_poll(**overrides):
    fields = dict(sender_pk=KP.public_key, question=b"best option?",
                  answers=(b"yes", b"no"), score_min=-1, score_max=1,
                  weight_model=WeightModel.ACCOUNT,
                  eligibility=MinBalance(threshold=0),
                  snapshot_height=0, close_slot=100, fee=1,
                  timestamp=1_690_000_000_000)
    fields.update(overrides)
    return PollCreationTx(**fields)
