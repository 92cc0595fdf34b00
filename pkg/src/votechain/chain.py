"""Blocks, ledger state transitions, fork tracking and post-close pruning.

The store keeps every validated block plus the full ledger state it produced,
so fork choice and reorgs are tip-pointer moves: the canonical state is always
the stored state of the canonical tip, and a branch's history is available for
eligibility snapshots.

Fees are debited from senders into a per-generator fee-credit ledger that is
not spendable, keeping the exact conservation identity
genesis_supply == sum(balances) + sum(fees_credited).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Iterable, Optional, Union

from . import tally as tally_mod
from .crypto import (
    Address,
    b58encode,
    decode_address,
    derive_address,
    hash256,
    sign,
    verify,
)
from .tx import (
    BLANK_ANSWER,
    VOTE_STAKE,
    IssueTx,
    DataTx,
    MinBalance,
    PollCreationTx,
    Transaction,
    TransferTx,
    TxValidationError,
    Whitelist,
    WeightModel,
    answer_address,
    asset_id_of,
    expiry_ms,
    full_bytes,
    parse_prefix,
    parse_vote_attachment,
    poll_address,
    to_sign_bytes,
    tx_id,
    validate_stateless,
)

NATIVE = "native"
GENESIS_PREV_HASH = b"\x00" * 32

HEADER_SIZE = 8 + 8 + 32 + 25 + 32 + 32 + 2 + 64 + 8
PRUNED_TX_MARKER = 0xFE


class ChainErrorCode(Enum):
    INSUFFICIENT_BALANCE = "INSUFFICIENT_BALANCE"
    DOUBLE_VOTE = "DOUBLE_VOTE"
    POLL_CLOSED = "POLL_CLOSED"
    INELIGIBLE_VOTER = "INELIGIBLE_VOTER"
    UNKNOWN_POLL = "UNKNOWN_POLL"
    SCORE_OUT_OF_RANGE = "SCORE_OUT_OF_RANGE"
    MALFORMED_VOTE = "MALFORMED_VOTE"
    TX_REPLAY = "TX_REPLAY"
    MALFORMED_BLOCK = "MALFORMED_BLOCK"
    UNKNOWN_PARENT = "UNKNOWN_PARENT"
    POLL_STILL_OPEN = "POLL_STILL_OPEN"


class ChainError(Exception):
    def __init__(self, code: ChainErrorCode, message: str = ""):
        self.code = code
        super().__init__(f"{code.value}: {message}" if message else code.value)


# --- blocks ---

@dataclass(frozen=True)
class BlockHeader:
    height: int
    slot: int
    prev_hash: bytes
    generator_id: Address
    generator_pk: bytes
    payload_root: bytes
    tx_count: int
    signature: bytes = b"\x00" * 64
    nonce: int = 0

    def signing_bytes(self) -> bytes:
        """Everything the generator signs: all fields before the signature."""
        return b"".join([
            struct.pack(">Q", self.height),
            struct.pack(">Q", self.slot),
            self.prev_hash,
            bytes(self.generator_id),
            self.generator_pk,
            self.payload_root,
            struct.pack(">H", self.tx_count),
        ])

    def header_bytes(self) -> bytes:
        """Full wire form; the nonce sits after the signature so grinding it
        changes the block hash without invalidating the signature."""
        return self.signing_bytes() + self.signature + struct.pack(">Q", self.nonce)

    def block_hash(self) -> bytes:
        return hash256(self.header_bytes())


def parse_header(data: bytes) -> BlockHeader:
    if len(data) != HEADER_SIZE:
        raise ChainError(ChainErrorCode.MALFORMED_BLOCK, "bad header size")
    height, slot = struct.unpack(">QQ", data[:16])
    prev_hash = data[16:48]
    generator_id = decode_address(data[48:73])
    generator_pk = data[73:105]
    payload_root = data[105:137]
    tx_count = struct.unpack(">H", data[137:139])[0]
    signature = data[139:203]
    nonce = struct.unpack(">Q", data[203:211])[0]
    return BlockHeader(height, slot, prev_hash, generator_id, generator_pk,
                       payload_root, tx_count, signature, nonce)


@dataclass(frozen=True)
class PrunedVoteTx:
    """A vote transfer whose attachment (the vote content) was pruned post-close.

    The payment skeleton stays so balances still replay; the original tx id is
    retained so the payload root and every block hash still verify. The
    signature covered the dropped attachment, so stubs exist only in local
    storage and are never relayed.
    """
    pruned_tx_id: bytes
    sender_pk: bytes
    recipient: Address
    amount: int
    fee: int
    timestamp: int


BlockTx = Union[Transaction, PrunedVoteTx]


def payload_root(tx_ids: Iterable[bytes]) -> bytes:
    """Commits to the ordered tx ids only, so pruning attachments after a poll
    closes cannot break any block hash."""
    return hash256(b"".join(tx_ids))


@dataclass
class Block:
    header: BlockHeader
    transactions: list[BlockTx]

    def block_hash(self) -> bytes:
        return self.header.block_hash()

    def tx_ids(self) -> list[bytes]:
        return [t.pruned_tx_id if isinstance(t, PrunedVoteTx) else tx_id(t)
                for t in self.transactions]

    def to_bytes(self) -> bytes:
        parts = [self.header.header_bytes()]
        for t in self.transactions:
            if isinstance(t, PrunedVoteTx):
                parts.append(bytes([PRUNED_TX_MARKER]) + t.pruned_tx_id
                             + t.sender_pk + bytes(t.recipient)
                             + struct.pack(">qqq", t.amount, t.fee, t.timestamp))
            else:
                parts.append(full_bytes(t))
        return b"".join(parts)


PRUNED_TX_SIZE = 1 + 32 + 32 + 25 + 8 + 8 + 8


def parse_block(data: bytes) -> Block:
    header = parse_header(data[:HEADER_SIZE])
    txs: list[BlockTx] = []
    pos = HEADER_SIZE
    while pos < len(data):
        if data[pos] == PRUNED_TX_MARKER:
            if pos + PRUNED_TX_SIZE > len(data):
                raise ChainError(ChainErrorCode.MALFORMED_BLOCK, "truncated pruned tx")
            chunk = data[pos + 1 : pos + PRUNED_TX_SIZE]
            amount, fee, timestamp = struct.unpack(">qqq", chunk[89:113])
            txs.append(PrunedVoteTx(
                pruned_tx_id=chunk[:32],
                sender_pk=chunk[32:64],
                recipient=decode_address(chunk[64:89]),
                amount=amount, fee=fee, timestamp=timestamp))
            pos += PRUNED_TX_SIZE
        else:
            try:
                t, consumed = parse_prefix(data[pos:])
            except TxValidationError as exc:
                raise ChainError(ChainErrorCode.MALFORMED_BLOCK, str(exc)) from None
            txs.append(t)
            pos += consumed
    if len(txs) != header.tx_count:
        raise ChainError(ChainErrorCode.MALFORMED_BLOCK, "tx count mismatch")
    return Block(header, txs)


# --- ledger state ---

@dataclass(frozen=True)
class VoteRecord:
    tx_id: str          # base-58
    answer_index: int   # BLANK_ANSWER for blank votes
    score: int

    @property
    def blank(self) -> bool:
        return self.answer_index == BLANK_ANSWER


STATUS_OPEN = "OPEN"
STATUS_CLOSED = "CLOSED"


@dataclass(frozen=True)
class PollRecord:
    poll_id: str                 # base-58
    creator: str
    question: bytes
    answers: tuple[bytes, ...]
    score_min: int
    score_max: int
    weight_model: WeightModel
    weight_asset_id: str | None  # base-58 asset id
    eligibility: Whitelist | MinBalance
    snapshot_height: int         # as requested in the poll tx
    effective_snapshot_height: int
    close_slot: int
    created_height: int
    vote_stake: int
    poll_address: str
    answer_addresses: tuple[str, ...]
    status: str = STATUS_OPEN
    # balance maps frozen at the snapshot height; never mutated after capture
    weight_snapshot: tuple[tuple[str, int], ...] = ()
    eligibility_snapshot: tuple[tuple[str, int], ...] = ()

    def weight_balance(self, address: str) -> int:
        for addr, bal in self.weight_snapshot:
            if addr == address:
                return bal
        return 0

    def eligibility_balance(self, address: str) -> int:
        for addr, bal in self.eligibility_snapshot:
            if addr == address:
                return bal
        return 0


@dataclass
class ChainState:
    balances: dict[str, dict[str, int]] = field(default_factory=dict)
    polls: dict[str, PollRecord] = field(default_factory=dict)
    votes: dict[str, dict[str, VoteRecord]] = field(default_factory=dict)
    results: dict[str, "tally_mod.Tally"] = field(default_factory=dict)
    fees_credited: dict[str, int] = field(default_factory=dict)
    tx_index: dict[str, int] = field(default_factory=dict)   # tx id -> height
    vote_targets: dict[str, tuple[str, int | None]] = field(default_factory=dict)
    genesis_supply: int = 0
    height: int = 0
    slot: int = 0

    def clone(self) -> "ChainState":
        return ChainState(
            balances={a: dict(assets) for a, assets in self.balances.items()},
            polls=dict(self.polls),
            votes={p: dict(v) for p, v in self.votes.items()},
            results=dict(self.results),
            fees_credited=dict(self.fees_credited),
            tx_index=dict(self.tx_index),
            vote_targets=dict(self.vote_targets),
            genesis_supply=self.genesis_supply,
            height=self.height,
            slot=self.slot,
        )

    def balance(self, address: str, asset: str = NATIVE) -> int:
        return self.balances.get(address, {}).get(asset, 0)

    def _credit(self, address: str, asset: str, amount: int):
        assets = self.balances.setdefault(address, {})
        assets[asset] = assets.get(asset, 0) + amount

    def _debit(self, address: str, asset: str, amount: int):
        have = self.balance(address, asset)
        if have < amount:
            raise ChainError(ChainErrorCode.INSUFFICIENT_BALANCE,
                             f"{address} has {have} {asset}, needs {amount}")
        assets = self.balances[address]
        remaining = have - amount
        if remaining == 0:
            del assets[asset]
            if not assets:
                del self.balances[address]
        else:
            assets[asset] = remaining

    def total_native(self) -> int:
        return sum(assets.get(NATIVE, 0) for assets in self.balances.values())

    def total_fees_credited(self) -> int:
        return sum(self.fees_credited.values())

    def to_json(self) -> dict:
        """Deterministic full-state rendering; its hash is the state root."""
        def poll_json(p: PollRecord) -> dict:
            if isinstance(p.eligibility, Whitelist):
                elig = {"kind": "whitelist",
                        "addresses": [str(a) for a in p.eligibility.addresses]}
            else:
                elig = {"kind": "min_balance", "threshold": p.eligibility.threshold,
                        "assetId": b58encode(p.eligibility.asset_id)
                        if p.eligibility.asset_id else None}
            return {
                "pollId": p.poll_id,
                "creator": p.creator,
                "question": p.question.decode("utf-8", "replace"),
                "answers": [a.decode("utf-8", "replace") for a in p.answers],
                "scoreMin": p.score_min,
                "scoreMax": p.score_max,
                "weightModel": p.weight_model.name,
                "weightAssetId": p.weight_asset_id,
                "eligibility": elig,
                "snapshotHeight": p.snapshot_height,
                "effectiveSnapshotHeight": p.effective_snapshot_height,
                "closeSlot": p.close_slot,
                "createdHeight": p.created_height,
                "voteStake": p.vote_stake,
                "pollAddress": p.poll_address,
                "answerAddresses": list(p.answer_addresses),
                "status": p.status,
                "weightSnapshot": {a: b for a, b in sorted(p.weight_snapshot)},
                "eligibilitySnapshot": {a: b for a, b in sorted(p.eligibility_snapshot)},
            }

        return {
            "height": self.height,
            "slot": self.slot,
            "genesisSupply": self.genesis_supply,
            "balances": {a: {k: v for k, v in sorted(assets.items())}
                         for a, assets in sorted(self.balances.items())},
            "feesCredited": dict(sorted(self.fees_credited.items())),
            "polls": {pid: poll_json(p) for pid, p in sorted(self.polls.items())},
            "votes": {pid: {voter: {"txId": v.tx_id,
                                    "answerIndex": v.answer_index,
                                    "score": v.score}
                            for voter, v in sorted(votes.items())}
                      for pid, votes in sorted(self.votes.items())},
            "results": {pid: tally_mod.tally_json(t, self.polls[pid])
                        for pid, t in sorted(self.results.items())},
        }


# --- single-transaction application ---

SnapshotSource = Callable[[int], Optional[ChainState]]


def _capture_snapshot(state_at: ChainState | None, asset_key: str) -> tuple[tuple[str, int], ...]:
    if state_at is None:
        return ()
    rows = []
    for addr, assets in state_at.balances.items():
        bal = assets.get(asset_key, 0)
        if bal > 0:
            rows.append((addr, bal))
    return tuple(sorted(rows))


def _register_poll(state: ChainState, tx: PollCreationTx, height: int,
                   snapshot_source: SnapshotSource):
    pid_bytes = tx_id(tx)
    pid = b58encode(pid_bytes)
    effective = min(tx.snapshot_height, max(height - 1, 0))
    snap_state = snapshot_source(effective)

    if tx.weight_model == WeightModel.ACCOUNT:
        weight_snapshot: tuple[tuple[str, int], ...] = ()
    elif tx.weight_model == WeightModel.ACCOUNT_BALANCE:
        weight_snapshot = _capture_snapshot(snap_state, NATIVE)
    else:
        weight_snapshot = _capture_snapshot(snap_state, b58encode(tx.weight_asset_id))

    if isinstance(tx.eligibility, MinBalance):
        elig_asset = (b58encode(tx.eligibility.asset_id)
                      if tx.eligibility.asset_id else NATIVE)
        eligibility_snapshot = _capture_snapshot(snap_state, elig_asset)
    else:
        eligibility_snapshot = ()

    answer_addrs = tuple(str(answer_address(pid_bytes, i)) for i in range(len(tx.answers)))
    record = PollRecord(
        poll_id=pid,
        creator=str(derive_address(tx.sender_pk)),
        question=tx.question,
        answers=tx.answers,
        score_min=tx.score_min,
        score_max=tx.score_max,
        weight_model=tx.weight_model,
        weight_asset_id=b58encode(tx.weight_asset_id) if tx.weight_asset_id else None,
        eligibility=tx.eligibility,
        snapshot_height=tx.snapshot_height,
        effective_snapshot_height=effective,
        close_slot=tx.close_slot,
        created_height=height,
        vote_stake=VOTE_STAKE,
        poll_address=str(poll_address(pid_bytes)),
        answer_addresses=answer_addrs,
        weight_snapshot=weight_snapshot,
        eligibility_snapshot=eligibility_snapshot,
    )
    state.polls[pid] = record
    state.votes[pid] = {}
    state.vote_targets[record.poll_address] = (pid, None)
    for i, addr in enumerate(answer_addrs):
        state.vote_targets[addr] = (pid, i)


def _eligible(poll: PollRecord, voter: str) -> bool:
    if isinstance(poll.eligibility, Whitelist):
        return any(str(a) == voter for a in poll.eligibility.addresses)
    return poll.eligibility_balance(voter) >= poll.eligibility.threshold


def _apply_vote(state: ChainState, tx: TransferTx, slot: int, vote_txid: str):
    pid_bytes, answer_index, score = parse_vote_attachment(tx.attachment)
    pid = b58encode(pid_bytes)
    poll = state.polls.get(pid)
    if poll is None:
        raise ChainError(ChainErrorCode.UNKNOWN_POLL, pid)
    if slot > poll.close_slot:
        raise ChainError(ChainErrorCode.POLL_CLOSED,
                         f"slot {slot} past close {poll.close_slot}")
    voter = str(derive_address(tx.sender_pk))
    if voter in state.votes[pid]:
        raise ChainError(ChainErrorCode.DOUBLE_VOTE, f"{voter} already voted on {pid}")
    if not _eligible(poll, voter):
        raise ChainError(ChainErrorCode.INELIGIBLE_VOTER, voter)
    if tx.asset_id is not None or tx.amount != poll.vote_stake:
        raise ChainError(ChainErrorCode.MALFORMED_VOTE,
                         "vote must pay the poll's stake in the native token")
    recipient = str(tx.recipient)
    if answer_index == BLANK_ANSWER:
        if recipient != poll.poll_address:
            raise ChainError(ChainErrorCode.MALFORMED_VOTE,
                             "blank vote must pay the poll address")
    else:
        if answer_index >= len(poll.answers):
            raise ChainError(ChainErrorCode.MALFORMED_VOTE,
                             f"poll has no answer {answer_index}")
        if recipient != poll.answer_addresses[answer_index]:
            raise ChainError(ChainErrorCode.MALFORMED_VOTE,
                             "recipient is not the chosen answer's address")
        if not poll.score_min <= score <= poll.score_max:
            raise ChainError(ChainErrorCode.SCORE_OUT_OF_RANGE,
                             f"score {score} outside "
                             f"[{poll.score_min}, {poll.score_max}]")
    state.votes[pid][voter] = VoteRecord(tx_id=vote_txid, answer_index=answer_index,
                                         score=score)


def apply_pruned_stub(state: ChainState, stub: PrunedVoteTx, height: int,
                      generator: str):
    """Replay the payment skeleton of a pruned vote; the vote content is gone
    by design, so no vote is registered."""
    txid = b58encode(stub.pruned_tx_id)
    if txid in state.tx_index:
        raise ChainError(ChainErrorCode.TX_REPLAY, txid)
    sender = str(derive_address(stub.sender_pk))
    state._debit(sender, NATIVE, stub.fee)
    state.fees_credited[generator] = state.fees_credited.get(generator, 0) + stub.fee
    state._debit(sender, NATIVE, stub.amount)
    state._credit(str(stub.recipient), NATIVE, stub.amount)
    state.tx_index[txid] = height


def apply_tx(state: ChainState, tx: Transaction, height: int, slot: int,
             generator: str, snapshot_source: SnapshotSource):
    """Apply one transaction in place; raises ChainError leaving state dirty
    (callers apply to a scratch clone)."""
    txid = b58encode(tx_id(tx))
    if txid in state.tx_index:
        raise ChainError(ChainErrorCode.TX_REPLAY, txid)
    sender = str(derive_address(tx.sender_pk))

    state._debit(sender, NATIVE, tx.fee)
    state.fees_credited[generator] = state.fees_credited.get(generator, 0) + tx.fee

    if isinstance(tx, TransferTx):
        asset_key = b58encode(tx.asset_id) if tx.asset_id else NATIVE
        state._debit(sender, asset_key, tx.amount)
        state._credit(str(tx.recipient), asset_key, tx.amount)
        vote = parse_vote_attachment(tx.attachment)
        if vote is not None:
            _apply_vote(state, tx, slot, txid)
    elif isinstance(tx, IssueTx):
        state._credit(sender, b58encode(asset_id_of(tx)), tx.quantity)
    elif isinstance(tx, PollCreationTx):
        _register_poll(state, tx, height, snapshot_source)
    elif isinstance(tx, DataTx):
        pass  # data payloads carry no ledger effect
    else:
        raise ChainError(ChainErrorCode.MALFORMED_BLOCK, f"unknown tx {tx!r}")

    state.tx_index[txid] = height


def _close_due_polls(state: ChainState, slot: int):
    for pid, poll in list(state.polls.items()):
        if poll.status == STATUS_OPEN and slot > poll.close_slot:
            state.polls[pid] = replace(poll, status=STATUS_CLOSED)
            state.results[pid] = tally_mod.compute_tally(state, pid,
                                                         finalized_at_slot=slot)


def validate_block_structure(block: Block, slot_duration_ms: int, max_txs: int):
    """Stateless block checks: payload root, counts, per-tx validity, expiry."""
    header = block.header
    if header.tx_count != len(block.transactions):
        raise ChainError(ChainErrorCode.MALFORMED_BLOCK, "tx count mismatch")
    if len(block.transactions) > max_txs:
        raise ChainError(ChainErrorCode.MALFORMED_BLOCK,
                         f"{len(block.transactions)} txs exceeds cap {max_txs}")
    if payload_root(block.tx_ids()) != header.payload_root:
        raise ChainError(ChainErrorCode.MALFORMED_BLOCK, "payload root mismatch")
    wall_ms = header.slot * slot_duration_ms
    for t in block.transactions:
        if isinstance(t, PrunedVoteTx):
            continue
        try:
            validate_stateless(t)
        except TxValidationError as exc:
            raise ChainError(ChainErrorCode.MALFORMED_BLOCK, str(exc)) from None
        if t.signature is None or not verify(t.sender_pk, to_sign_bytes(t), t.signature):
            raise ChainError(ChainErrorCode.MALFORMED_BLOCK, "bad tx signature")
        if expiry_ms(t) < wall_ms:
            raise ChainError(ChainErrorCode.MALFORMED_BLOCK, "expired tx included")


def apply_block(state: ChainState, block: Block,
                snapshot_source: SnapshotSource) -> ChainState:
    """Apply a structurally valid block to its parent state.

    The whole block is rejected if any transaction is contextually invalid;
    on success the returned state has due polls closed and tallies frozen.
    """
    new_state = state.clone()
    new_state.height = block.header.height
    new_state.slot = block.header.slot
    generator = str(block.header.generator_id)
    for t in block.transactions:
        if isinstance(t, PrunedVoteTx):
            apply_pruned_stub(new_state, t, block.header.height, generator)
        else:
            apply_tx(new_state, t, block.header.height, block.header.slot,
                     generator, snapshot_source)
    _close_due_polls(new_state, block.header.slot)
    return new_state


def choose_fork(tips: Iterable[tuple[int, bytes]]) -> bytes:
    """Longest chain wins; equal lengths break toward the smaller tip hash."""
    best = None
    for height, tip_hash in tips:
        if best is None or (-height, tip_hash) < (-best[0], best[1]):
            best = (height, tip_hash)
    if best is None:
        raise ValueError("no forks given")
    return best[1]


class Chain:
    """Block store with per-block states, canonical-tip tracking and pruning."""

    def __init__(self, genesis_block: Block, genesis_state: ChainState,
                 slot_duration_ms: int = 60_000, max_block_txs: int = 100,
                 header_validator=None):
        self.slot_duration_ms = slot_duration_ms
        self.max_block_txs = max_block_txs
        self.header_validator = header_validator  # callable(header, hash, parent_header, parent_state)
        g_hash = genesis_block.block_hash()
        self.genesis_hash = g_hash
        self.blocks: dict[bytes, Block] = {g_hash: genesis_block}
        self.parents: dict[bytes, bytes] = {}
        self.heights: dict[bytes, int] = {g_hash: 0}
        self.states: dict[bytes, ChainState] = {g_hash: genesis_state}
        self.children: dict[bytes, list[bytes]] = {}
        self.tip = g_hash

    # -- queries --

    def has_block(self, block_hash: bytes) -> bool:
        return block_hash in self.blocks

    def tip_header(self) -> BlockHeader:
        return self.blocks[self.tip].header

    def height(self) -> int:
        return self.heights[self.tip]

    def canonical_state(self) -> ChainState:
        return self.states[self.tip]

    def state_of(self, block_hash: bytes) -> ChainState:
        return self.states[block_hash]

    def tips(self) -> list[tuple[int, bytes]]:
        leaves = [h for h in self.blocks if h not in self.children]
        return [(self.heights[h], h) for h in leaves]

    def canonical_hashes(self) -> list[bytes]:
        out = []
        h = self.tip
        while True:
            out.append(h)
            if h == self.genesis_hash:
                break
            h = self.parents[h]
        out.reverse()
        return out

    def canonical_blocks(self) -> list[Block]:
        return [self.blocks[h] for h in self.canonical_hashes()]

    def block_at_height(self, height: int) -> Block | None:
        hashes = self.canonical_hashes()
        if 0 <= height < len(hashes):
            return self.blocks[hashes[height]]
        return None

    def is_canonical(self, block_hash: bytes) -> bool:
        h = self.tip
        while True:
            if h == block_hash:
                return True
            if h == self.genesis_hash:
                return False
            h = self.parents[h]

    def branch_state_at(self, branch_tip: bytes, height: int) -> ChainState | None:
        """State at a given height walking back from a branch tip."""
        h = branch_tip
        while True:
            if self.heights[h] <= height:
                return self.states[h]
            if h == self.genesis_hash:
                return self.states[h]
            h = self.parents[h]

    # -- mutation --

    def add_block(self, block: Block) -> bytes:
        """Validate against its parent and store; updates the canonical tip.

        Raises ChainError / the header validator's error on any invalid block;
        an already-known block is a no-op returning its hash.
        """
        b_hash = block.block_hash()
        if b_hash in self.blocks:
            return b_hash
        parent_hash = block.header.prev_hash
        parent = self.blocks.get(parent_hash)
        if parent is None:
            raise ChainError(ChainErrorCode.UNKNOWN_PARENT, b58encode(parent_hash))
        if block.header.height != parent.header.height + 1:
            raise ChainError(ChainErrorCode.MALFORMED_BLOCK, "bad height")
        validate_block_structure(block, self.slot_duration_ms, self.max_block_txs)
        parent_state = self.states[parent_hash]
        if self.header_validator is not None:
            self.header_validator(block.header, b_hash, parent.header, parent_state)
        new_state = apply_block(
            parent_state, block,
            snapshot_source=lambda h: self.branch_state_at(parent_hash, h))
        # own copy: blocks travel between simulated nodes by reference, and
        # pruning must stay local to one store
        self.blocks[b_hash] = Block(block.header, list(block.transactions))
        self.parents[b_hash] = parent_hash
        self.heights[b_hash] = block.header.height
        self.states[b_hash] = new_state
        self.children.setdefault(parent_hash, []).append(b_hash)
        self.tip = choose_fork(self.tips())
        return b_hash

    # -- receipts and pruning --

    def verify_receipt(self, txid_b58: str) -> dict:
        """Inclusion report for a tx id on the canonical chain only."""
        state = self.canonical_state()
        height = state.tx_index.get(txid_b58)
        if height is None:
            return {"found": False}
        return {
            "found": True,
            "height": height,
            "confirmations": self.height() - height + 1,
        }

    def prune_closed_poll(self, poll_id_b58: str) -> "tally_mod.Tally":
        """Drop vote attachment payloads for a closed, finalized poll from the
        stored blocks and scrub the per-voter records from the canonical
        state; ids, headers and the frozen tally stay intact. Returns the
        frozen tally (the one artifact that outlives the votes)."""
        state = self.canonical_state()
        poll = state.polls.get(poll_id_b58)
        if poll is None:
            raise ChainError(ChainErrorCode.UNKNOWN_POLL, poll_id_b58)
        if poll.status != STATUS_CLOSED or poll_id_b58 not in state.results:
            raise ChainError(ChainErrorCode.POLL_STILL_OPEN, poll_id_b58)
        for block in self.blocks.values():
            for i, t in enumerate(block.transactions):
                if isinstance(t, PrunedVoteTx) or not isinstance(t, TransferTx):
                    continue
                vote = parse_vote_attachment(t.attachment)
                if vote is not None and b58encode(vote[0]) == poll_id_b58:
                    block.transactions[i] = PrunedVoteTx(
                        pruned_tx_id=tx_id(t), sender_pk=t.sender_pk,
                        recipient=t.recipient, amount=t.amount, fee=t.fee,
                        timestamp=t.timestamp)
        state.votes[poll_id_b58] = {}
        return state.results[poll_id_b58]

    def verify_all_block_hashes(self) -> bool:
        """Recheck every stored block: header hash linkage and payload root."""
        for b_hash, block in self.blocks.items():
            if block.block_hash() != b_hash:
                return False
            if payload_root(block.tx_ids()) != block.header.payload_root:
                return False
            if b_hash != self.genesis_hash:
                if block.header.prev_hash != self.parents[b_hash]:
                    return False
        return True


# --- genesis ---

def _genesis_keypair(doc_bytes: bytes):
    from .crypto import generate_keys
    return generate_keys(hash256(b"votechain-genesis:" + doc_bytes))


def genesis_asset_id(name: str) -> bytes:
    """Synthetic id for an asset allocated at genesis (no issue tx exists)."""
    return hash256(b"genesis-asset:" + name.encode())


def build_genesis(doc: dict) -> tuple[Block, ChainState]:
    """Build the genesis block and initial state from a genesis document.

    Document shape:
      {"native_allocations": {"<address>": amount, ...},
       "assets": [{"name": "...", "allocations": {"<address>": amount}}]}
    """
    import json

    doc_bytes = json.dumps(doc, sort_keys=True).encode()
    keypair = _genesis_keypair(doc_bytes)

    state = ChainState()
    for addr, amount in sorted(doc.get("native_allocations", {}).items()):
        if amount < 0:
            raise ValueError("negative genesis allocation")
        decode_address(addr)
        state._credit(addr, NATIVE, amount)
        state.genesis_supply += amount
    for asset in doc.get("assets", []):
        asset_key = b58encode(genesis_asset_id(asset["name"]))
        for addr, amount in sorted(asset.get("allocations", {}).items()):
            if amount < 0:
                raise ValueError("negative genesis allocation")
            decode_address(addr)
            state._credit(addr, asset_key, amount)

    header = BlockHeader(
        height=0,
        slot=0,
        prev_hash=GENESIS_PREV_HASH,
        generator_id=keypair.address,
        generator_pk=keypair.public_key,
        payload_root=payload_root([]),
        tx_count=0,
    )
    header = replace(header, signature=sign(keypair.secret_key, header.signing_bytes()))
    return Block(header, []), state
