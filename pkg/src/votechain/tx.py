"""Transaction types, bit-exact binary serialization, parsing and stateless validation.

Wire layout conventions (all integers big-endian):
  * variable-length arrays carry a 2-byte length prefix
  * optional 32-byte ids carry a 1-byte presence flag (0x00 absent, 0x01 + 32 bytes)
  * signed envelope: type(1) | signature(64) | to_sign, where to_sign itself
    starts with the type byte again (the parser cross-checks the two)

Layouts per type:
  Issue(3)    = type | sender_pk(32) | len+name | len+description | quantity(8)
                | decimals(1) | reissuable(1) | fee(8) | timestamp(8)
  Transfer(4) = type | sender_pk(32) | asset_opt | fee_asset_opt | timestamp(8)
                | amount(8) | fee(8) | recipient(25) | len+attachment
  Data(12)    = type | sender_pk(32) | len+data | fee(8) | timestamp(8)
  Poll(16)    = type | sender_pk(32) | len+question | answer_count(1)
                | (len+label)* | score_min(4) | score_max(4) | weight_model(1)
                | weight_asset_opt | eligibility | snapshot_height(8)
                | close_slot(8) | fee(8) | timestamp(8)
  eligibility = 0x00 | count(2) | address(25)*   (whitelist)
              | 0x01 | threshold(8) | asset_opt  (minimum balance)

A vote is a Transfer whose attachment is exactly poll_id(32) | answer_index(1)
| score(4, signed); blank votes use answer_index 0xFF and pay the poll address.

The deadline_minutes field is mempool metadata, not part of the wire format;
it travels in the JSON rendering only.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from typing import Union

from .crypto import (
    ADDRESS_LENGTH,
    KEY_LENGTH,
    SIGNATURE_LENGTH,
    Address,
    address_from_hash,
    b58encode,
    decode_address,
    derive_address,
    hash256,
    sign,
    verify,
)

TYPE_ISSUE = 3
TYPE_TRANSFER = 4
TYPE_DATA = 12
TYPE_POLL = 16

MIN_ASSET_NAME_LENGTH = 4
MAX_ASSET_NAME_LENGTH = 16
MAX_DESCRIPTION_LENGTH = 1000
MAX_DECIMALS = 8
MAX_ATTACHMENT_SIZE = 140
MAX_DATA_SIZE = 140
MAX_QUESTION_SIZE = 256
MAX_ANSWERS = 100
MAX_ANSWER_LABEL_SIZE = 64
MAX_POLL_PAYLOAD = 4096

MIN_FEE = 1
VOTE_STAKE = 1  # fixed anti-spam deposit paid to the chosen answer address
VOTE_ATTACHMENT_LENGTH = 37
BLANK_ANSWER = 0xFF
DEFAULT_DEADLINE_MINUTES = 60

I64_MAX = 2**63 - 1
I64_MIN = -(2**63)


class TxErrorCode(Enum):
    NEGATIVE_AMOUNT = "NegativeAmount"
    TOO_BIG_ARRAY = "TooBigArray"
    INVALID_NAME = "InvalidName"
    INSUFFICIENT_FEE = "InsufficientFee"
    OVERFLOW = "OverflowError"
    MALFORMED_BYTES = "MalformedBytes"
    BAD_SIGNATURE = "BadSignature"
    INVALID_SCORE_RANGE = "InvalidScoreRange"
    TOO_MANY_ANSWERS = "TooManyAnswers"


class TxValidationError(Exception):
    def __init__(self, code: TxErrorCode, message: str = ""):
        self.code = code
        super().__init__(f"{code.value}: {message}" if message else code.value)


def _malformed(msg: str) -> TxValidationError:
    return TxValidationError(TxErrorCode.MALFORMED_BYTES, msg)


class WeightModel(IntEnum):
    ACCOUNT = 0
    ACCOUNT_BALANCE = 1
    ASSET_BALANCE = 2
    CURRENCY_BALANCE = 3


@dataclass(frozen=True)
class Whitelist:
    addresses: tuple[Address, ...]


@dataclass(frozen=True)
class MinBalance:
    threshold: int
    asset_id: bytes | None = None


Eligibility = Union[Whitelist, MinBalance]


def _check_deadline(deadline_minutes: int):
    if deadline_minutes <= 0:
        raise ValueError("deadline_minutes must be positive")


@dataclass(frozen=True)
class IssueTx:
    sender_pk: bytes
    name: bytes
    description: bytes
    quantity: int
    decimals: int
    reissuable: bool
    fee: int
    timestamp: int
    signature: bytes | None = None
    deadline_minutes: int = field(default=DEFAULT_DEADLINE_MINUTES, compare=False)

    tx_type = TYPE_ISSUE

    def __post_init__(self):
        _check_deadline(self.deadline_minutes)


@dataclass(frozen=True)
class TransferTx:
    sender_pk: bytes
    recipient: Address
    amount: int
    fee: int
    timestamp: int
    asset_id: bytes | None = None
    fee_asset_id: bytes | None = None
    attachment: bytes = b""
    signature: bytes | None = None
    deadline_minutes: int = field(default=DEFAULT_DEADLINE_MINUTES, compare=False)

    tx_type = TYPE_TRANSFER

    def __post_init__(self):
        _check_deadline(self.deadline_minutes)


@dataclass(frozen=True)
class DataTx:
    sender_pk: bytes
    data: bytes
    fee: int
    timestamp: int
    signature: bytes | None = None
    deadline_minutes: int = field(default=DEFAULT_DEADLINE_MINUTES, compare=False)

    tx_type = TYPE_DATA

    def __post_init__(self):
        _check_deadline(self.deadline_minutes)


@dataclass(frozen=True)
class PollCreationTx:
    sender_pk: bytes
    question: bytes
    answers: tuple[bytes, ...]
    score_min: int
    score_max: int
    weight_model: WeightModel
    eligibility: Eligibility
    snapshot_height: int
    close_slot: int
    fee: int
    timestamp: int
    weight_asset_id: bytes | None = None
    signature: bytes | None = None
    deadline_minutes: int = field(default=DEFAULT_DEADLINE_MINUTES, compare=False)

    tx_type = TYPE_POLL

    def __post_init__(self):
        _check_deadline(self.deadline_minutes)


Transaction = Union[IssueTx, TransferTx, DataTx, PollCreationTx]

_TYPE_NAMES = {
    TYPE_ISSUE: "issue",
    TYPE_TRANSFER: "transfer",
    TYPE_DATA: "data",
    TYPE_POLL: "poll_creation",
}


# --- serialization primitives ---

def _u8(v: int) -> bytes:
    return struct.pack(">B", v)


def _u16(v: int) -> bytes:
    return struct.pack(">H", v)


def _i32(v: int) -> bytes:
    return struct.pack(">i", v)


def _i64(v: int) -> bytes:
    return struct.pack(">q", v)


def _u64(v: int) -> bytes:
    return struct.pack(">Q", v)


def _arr(data: bytes) -> bytes:
    return _u16(len(data)) + data


def _opt32(value: bytes | None) -> bytes:
    if value is None:
        return b"\x00"
    if len(value) != 32:
        raise ValueError("optional id must be 32 bytes")
    return b"\x01" + value


class _Cursor:
    """Sequential reader that turns any overrun into MalformedBytes."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise _malformed("truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def i32(self) -> int:
        return struct.unpack(">i", self.take(4))[0]

    def i64(self) -> int:
        return struct.unpack(">q", self.take(8))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]

    def arr(self) -> bytes:
        return self.take(self.u16())

    def opt32(self) -> bytes | None:
        flag = self.u8()
        if flag == 0:
            return None
        if flag != 1:
            raise _malformed(f"bad presence flag {flag}")
        return self.take(32)

    def address(self) -> Address:
        raw = self.take(ADDRESS_LENGTH)
        try:
            return decode_address(raw)
        except ValueError as exc:
            raise _malformed(str(exc)) from None

    def done(self):
        if self.pos != len(self.data):
            raise _malformed(f"{len(self.data) - self.pos} trailing bytes")


def _eligibility_bytes(e: Eligibility) -> bytes:
    if isinstance(e, Whitelist):
        parts = [_u8(0), _u16(len(e.addresses))]
        parts.extend(bytes(a) for a in e.addresses)
        return b"".join(parts)
    return _u8(1) + _i64(e.threshold) + _opt32(e.asset_id)


def _parse_eligibility(cur: _Cursor) -> Eligibility:
    tag = cur.u8()
    if tag == 0:
        count = cur.u16()
        return Whitelist(tuple(cur.address() for _ in range(count)))
    if tag == 1:
        return MinBalance(threshold=cur.i64(), asset_id=cur.opt32())
    raise _malformed(f"bad eligibility tag {tag}")


def to_sign_bytes(tx: Transaction) -> bytes:
    """The byte image the signature covers; also the preimage of the tx id."""
    if isinstance(tx, IssueTx):
        return b"".join([
            _u8(TYPE_ISSUE),
            tx.sender_pk,
            _arr(tx.name),
            _arr(tx.description),
            _i64(tx.quantity),
            _u8(tx.decimals),
            _u8(1 if tx.reissuable else 0),
            _i64(tx.fee),
            _i64(tx.timestamp),
        ])
    if isinstance(tx, TransferTx):
        return b"".join([
            _u8(TYPE_TRANSFER),
            tx.sender_pk,
            _opt32(tx.asset_id),
            _opt32(tx.fee_asset_id),
            _i64(tx.timestamp),
            _i64(tx.amount),
            _i64(tx.fee),
            bytes(tx.recipient),
            _arr(tx.attachment),
        ])
    if isinstance(tx, DataTx):
        return b"".join([
            _u8(TYPE_DATA),
            tx.sender_pk,
            _arr(tx.data),
            _i64(tx.fee),
            _i64(tx.timestamp),
        ])
    if isinstance(tx, PollCreationTx):
        parts = [
            _u8(TYPE_POLL),
            tx.sender_pk,
            _arr(tx.question),
            _u8(len(tx.answers)),
        ]
        parts.extend(_arr(label) for label in tx.answers)
        parts.extend([
            _i32(tx.score_min),
            _i32(tx.score_max),
            _u8(int(tx.weight_model)),
            _opt32(tx.weight_asset_id),
            _eligibility_bytes(tx.eligibility),
            _u64(tx.snapshot_height),
            _u64(tx.close_slot),
            _i64(tx.fee),
            _i64(tx.timestamp),
        ])
        return b"".join(parts)
    raise TypeError(f"not a transaction: {tx!r}")


def tx_id(tx: Transaction) -> bytes:
    """Transaction identity: hash of the to_sign image (signature-independent)."""
    return hash256(to_sign_bytes(tx))


def asset_id_of(tx: IssueTx) -> bytes:
    """An issued asset is identified by its issue transaction's id."""
    return tx_id(tx)


def full_bytes(tx: Transaction) -> bytes:
    """Signed wire form: type | signature | to_sign (type byte appears twice)."""
    if tx.signature is None:
        raise TxValidationError(TxErrorCode.BAD_SIGNATURE, "unsigned transaction")
    return _u8(tx.tx_type) + tx.signature + to_sign_bytes(tx)


def sign_tx(secret_key: bytes, tx: Transaction) -> Transaction:
    """Validate, then attach the signature over the to_sign image."""
    validate_stateless(tx)
    return replace(tx, signature=sign(secret_key, to_sign_bytes(tx)))


def _parse_body(cur: _Cursor, tx_type: int) -> Transaction:
    sender_pk = cur.take(KEY_LENGTH)
    if tx_type == TYPE_ISSUE:
        name = cur.arr()
        description = cur.arr()
        quantity = cur.i64()
        decimals = cur.u8()
        reissuable_raw = cur.u8()
        if reissuable_raw > 1:
            raise _malformed("bad boolean byte")
        fee = cur.i64()
        timestamp = cur.i64()
        return IssueTx(sender_pk, name, description, quantity, decimals,
                       reissuable_raw == 1, fee, timestamp)
    if tx_type == TYPE_TRANSFER:
        asset_id = cur.opt32()
        fee_asset_id = cur.opt32()
        timestamp = cur.i64()
        amount = cur.i64()
        fee = cur.i64()
        recipient = cur.address()
        attachment = cur.arr()
        return TransferTx(sender_pk, recipient, amount, fee, timestamp,
                          asset_id, fee_asset_id, attachment)
    if tx_type == TYPE_DATA:
        data = cur.arr()
        fee = cur.i64()
        timestamp = cur.i64()
        return DataTx(sender_pk, data, fee, timestamp)
    if tx_type == TYPE_POLL:
        question = cur.arr()
        answer_count = cur.u8()
        answers = tuple(cur.arr() for _ in range(answer_count))
        score_min = cur.i32()
        score_max = cur.i32()
        model_raw = cur.u8()
        try:
            weight_model = WeightModel(model_raw)
        except ValueError:
            raise _malformed(f"unknown weight model {model_raw}") from None
        weight_asset_id = cur.opt32()
        eligibility = _parse_eligibility(cur)
        snapshot_height = cur.u64()
        close_slot = cur.u64()
        fee = cur.i64()
        timestamp = cur.i64()
        return PollCreationTx(sender_pk, question, answers, score_min, score_max,
                              weight_model, eligibility, snapshot_height, close_slot,
                              fee, timestamp, weight_asset_id)
    raise _malformed(f"unknown tx type {tx_type}")


def parse(data: bytes) -> Transaction:
    """Inverse of full_bytes: re-validates structure, stateless rules and signature.

    Raises TxValidationError; never returns a transaction that would fail
    validate_stateless or whose signature does not verify.
    """
    if len(data) < 1 + SIGNATURE_LENGTH + 1:
        raise _malformed("too short")
    outer_type = data[0]
    if outer_type not in _TYPE_NAMES:
        raise _malformed(f"unknown tx type {outer_type}")
    signature = data[1 : 1 + SIGNATURE_LENGTH]
    body = data[1 + SIGNATURE_LENGTH :]
    cur = _Cursor(body)
    inner_type = cur.u8()
    if inner_type != outer_type:
        raise _malformed("signed tx id does not match outer type")
    tx = _parse_body(cur, inner_type)
    cur.done()
    tx = replace(tx, signature=signature)
    validate_stateless(tx)
    if not verify(tx.sender_pk, body, signature):
        raise TxValidationError(TxErrorCode.BAD_SIGNATURE, "signature does not verify")
    return tx


def parse_prefix(data: bytes) -> tuple[Transaction, int]:
    """Parse one transaction from the front of a stream; returns (tx, consumed).

    Used for block payload decoding where encodings are concatenated.
    """
    if len(data) < 1 + SIGNATURE_LENGTH + 1:
        raise _malformed("too short")
    outer_type = data[0]
    if outer_type not in _TYPE_NAMES:
        raise _malformed(f"unknown tx type {outer_type}")
    signature = data[1 : 1 + SIGNATURE_LENGTH]
    cur = _Cursor(data)
    cur.pos = 1 + SIGNATURE_LENGTH
    inner_type = cur.u8()
    if inner_type != outer_type:
        raise _malformed("signed tx id does not match outer type")
    tx = _parse_body(cur, inner_type)
    consumed = cur.pos
    tx = replace(tx, signature=signature)
    validate_stateless(tx)
    if not verify(tx.sender_pk, data[1 + SIGNATURE_LENGTH : consumed], signature):
        raise TxValidationError(TxErrorCode.BAD_SIGNATURE, "signature does not verify")
    return tx, consumed


# --- stateless validation (first failing rule wins, in the appendix's order) ---

def _fail(code: TxErrorCode, msg: str):
    raise TxValidationError(code, msg)


def _validate_issue(tx: IssueTx):
    if tx.quantity <= 0:
        _fail(TxErrorCode.NEGATIVE_AMOUNT, "quantity must be positive")
    if len(tx.description) > MAX_DESCRIPTION_LENGTH:
        _fail(TxErrorCode.TOO_BIG_ARRAY, "description too long")
    if not MIN_ASSET_NAME_LENGTH <= len(tx.name) <= MAX_ASSET_NAME_LENGTH:
        _fail(TxErrorCode.INVALID_NAME, "asset name length out of range")
    if not 0 <= tx.decimals <= MAX_DECIMALS:
        _fail(TxErrorCode.TOO_BIG_ARRAY, "decimals out of range")
    if tx.fee <= 0:
        _fail(TxErrorCode.INSUFFICIENT_FEE, "fee must be at least 1")


def _validate_transfer(tx: TransferTx):
    if len(tx.attachment) > MAX_ATTACHMENT_SIZE:
        _fail(TxErrorCode.TOO_BIG_ARRAY, "attachment too long")
    if tx.amount <= 0:
        _fail(TxErrorCode.NEGATIVE_AMOUNT, "amount must be positive")
    if not I64_MIN <= tx.amount + tx.fee <= I64_MAX:
        _fail(TxErrorCode.OVERFLOW, "amount + fee overflows 64 bits")
    if tx.fee <= 0:
        _fail(TxErrorCode.INSUFFICIENT_FEE, "fee must be at least 1")


def _validate_data(tx: DataTx):
    if len(tx.data) > MAX_DATA_SIZE:
        _fail(TxErrorCode.TOO_BIG_ARRAY, "data too long")
    if tx.fee <= 0:
        _fail(TxErrorCode.INSUFFICIENT_FEE, "fee must be at least 1")


def _validate_poll(tx: PollCreationTx):
    if len(tx.question) > MAX_QUESTION_SIZE:
        _fail(TxErrorCode.TOO_BIG_ARRAY, "question too long")
    if not 1 <= len(tx.answers) <= MAX_ANSWERS:
        _fail(TxErrorCode.TOO_MANY_ANSWERS, "answer count out of 1..100")
    for label in tx.answers:
        if len(label) > MAX_ANSWER_LABEL_SIZE:
            _fail(TxErrorCode.TOO_BIG_ARRAY, "answer label too long")
    if tx.score_min > tx.score_max:
        _fail(TxErrorCode.INVALID_SCORE_RANGE, "score_min above score_max")
    needs_asset = tx.weight_model in (WeightModel.ASSET_BALANCE, WeightModel.CURRENCY_BALANCE)
    if needs_asset and tx.weight_asset_id is None:
        _fail(TxErrorCode.MALFORMED_BYTES, "weight model requires weight_asset_id")
    if not needs_asset and tx.weight_asset_id is not None:
        _fail(TxErrorCode.MALFORMED_BYTES, "weight model forbids weight_asset_id")
    if isinstance(tx.eligibility, MinBalance) and tx.eligibility.threshold < 0:
        _fail(TxErrorCode.NEGATIVE_AMOUNT, "negative eligibility threshold")
    if len(to_sign_bytes(tx)) > MAX_POLL_PAYLOAD:
        _fail(TxErrorCode.TOO_BIG_ARRAY, "poll payload exceeds 4096 bytes")
    if tx.fee <= 0:
        _fail(TxErrorCode.INSUFFICIENT_FEE, "fee must be at least 1")


def validate_stateless(tx: Transaction):
    """Raise TxValidationError on the first failing stateless rule."""
    if len(tx.sender_pk) != KEY_LENGTH:
        _fail(TxErrorCode.MALFORMED_BYTES, "sender public key must be 32 bytes")
    if isinstance(tx, IssueTx):
        _validate_issue(tx)
    elif isinstance(tx, TransferTx):
        _validate_transfer(tx)
    elif isinstance(tx, DataTx):
        _validate_data(tx)
    elif isinstance(tx, PollCreationTx):
        _validate_poll(tx)
    else:
        raise TypeError(f"not a transaction: {tx!r}")


def expiry_ms(tx: Transaction) -> int:
    """Absolute wall time after which an unconfirmed tx drops from mempools."""
    return tx.timestamp + 60_000 * tx.deadline_minutes


# --- vote profile of TransferTx ---

def poll_address(poll_id: bytes) -> Address:
    """The poll's own public address (blank votes pay this)."""
    return address_from_hash(hash256(poll_id))


def answer_address(poll_id: bytes, answer_index: int) -> Address:
    """Public address of one answer; votes for it pay this address."""
    if not 0 <= answer_index < MAX_ANSWERS:
        raise ValueError("answer index out of range")
    return address_from_hash(hash256(poll_id + _u8(answer_index)))


def vote_attachment(poll_id: bytes, answer_index: int, score: int) -> bytes:
    """37-byte vote payload: poll_id(32) | answer_index(1) | score(4, signed)."""
    if len(poll_id) != 32:
        raise ValueError("poll_id must be 32 bytes")
    return poll_id + _u8(answer_index) + _i32(score)


def parse_vote_attachment(attachment: bytes) -> tuple[bytes, int, int] | None:
    """Decode (poll_id, answer_index, score) from a 37-byte attachment, else None."""
    if len(attachment) != VOTE_ATTACHMENT_LENGTH:
        return None
    poll_id = attachment[:32]
    answer_index = attachment[32]
    score = struct.unpack(">i", attachment[33:])[0]
    return poll_id, answer_index, score


def make_vote_tx(sender_pk: bytes, poll_id: bytes, answer_index: int, score: int,
                 fee: int, timestamp: int,
                 deadline_minutes: int = DEFAULT_DEADLINE_MINUTES) -> TransferTx:
    """Build the unsigned vote transfer; blank votes pay the poll address."""
    if answer_index == BLANK_ANSWER:
        recipient = poll_address(poll_id)
        score = 0
    else:
        recipient = answer_address(poll_id, answer_index)
    return TransferTx(
        sender_pk=sender_pk,
        recipient=recipient,
        amount=VOTE_STAKE,
        fee=fee,
        timestamp=timestamp,
        attachment=vote_attachment(poll_id, answer_index, score),
        deadline_minutes=deadline_minutes,
    )


# --- human-readable rendering, appendix JSON style ---

def _b58_or_none(value: bytes | None) -> str | None:
    return b58encode(value) if value is not None else None


def to_json(tx: Transaction) -> dict:
    out = {
        "type": tx.tx_type,
        "kind": _TYPE_NAMES[tx.tx_type],
        "id": b58encode(tx_id(tx)),
        "sender": str(derive_address(tx.sender_pk)),
        "senderPublicKey": b58encode(tx.sender_pk),
        "fee": tx.fee,
        "timestamp": tx.timestamp,
        "deadline": tx.deadline_minutes,
        "signature": b58encode(tx.signature) if tx.signature else None,
    }
    if isinstance(tx, IssueTx):
        out.update({
            "assetId": b58encode(asset_id_of(tx)),
            "name": tx.name.decode("utf-8", "replace"),
            "description": tx.description.decode("utf-8", "replace"),
            "quantity": tx.quantity,
            "decimals": tx.decimals,
            "reissuable": tx.reissuable,
        })
    elif isinstance(tx, TransferTx):
        out.update({
            "recipient": str(tx.recipient),
            "assetId": _b58_or_none(tx.asset_id),
            "amount": tx.amount,
            "feeAsset": _b58_or_none(tx.fee_asset_id),
            "attachment": b58encode(tx.attachment),
        })
        vote = parse_vote_attachment(tx.attachment)
        if vote is not None:
            pid, index, score = vote
            out["vote"] = {
                "pollId": b58encode(pid),
                "answerIndex": None if index == BLANK_ANSWER else index,
                "score": score,
                "blank": index == BLANK_ANSWER,
            }
    elif isinstance(tx, DataTx):
        out["data"] = b58encode(tx.data)
    elif isinstance(tx, PollCreationTx):
        pid = tx_id(tx)
        if isinstance(tx.eligibility, Whitelist):
            eligibility = {"kind": "whitelist",
                           "addresses": [str(a) for a in tx.eligibility.addresses]}
        else:
            eligibility = {"kind": "min_balance",
                           "threshold": tx.eligibility.threshold,
                           "assetId": _b58_or_none(tx.eligibility.asset_id)}
        out.update({
            "pollId": b58encode(pid),
            "pollAddress": str(poll_address(pid)),
            "question": tx.question.decode("utf-8", "replace"),
            "answers": [
                {"index": i,
                 "label": label.decode("utf-8", "replace"),
                 "address": str(answer_address(pid, i))}
                for i, label in enumerate(tx.answers)
            ],
            "scoreMin": tx.score_min,
            "scoreMax": tx.score_max,
            "weightModel": tx.weight_model.name,
            "weightAssetId": _b58_or_none(tx.weight_asset_id),
            "eligibility": eligibility,
            "snapshotHeight": tx.snapshot_height,
            "closeSlot": tx.close_slot,
        })
    return out
