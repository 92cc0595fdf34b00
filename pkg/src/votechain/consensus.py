"""Slot clock, stake-weighted proposer selection and block production.

Proposer selection is a pure function of (previous block hash, slot, stake
table): the selection hash is reduced modulo total stake and mapped onto the
stake intervals of addresses in sorted byte order, so every node agrees on
the schedule without communication.

Accepted block hashes must carry a configured number of leading zero bits;
the producer grinds the post-signature header nonce until the rule holds.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable

from .chain import (
    Block,
    BlockHeader,
    ChainState,
    NATIVE,
    SnapshotSource,
    apply_tx,
    payload_root,
)
from .crypto import KeyPair, decode_address, derive_address, hash256, sign, verify
from .tx import Transaction, expiry_ms, tx_id


class ConsensusErrorCode(Enum):
    EMPTY_STAKE = "EMPTY_STAKE"
    NOT_PROPOSER = "NOT_PROPOSER"
    WRONG_PROPOSER = "WRONG_PROPOSER"
    BAD_HEADER_SIGNATURE = "BAD_HEADER_SIGNATURE"
    INSUFFICIENT_ZERO_PREFIX = "INSUFFICIENT_ZERO_PREFIX"
    SLOT_REGRESSION = "SLOT_REGRESSION"


class ConsensusError(Exception):
    def __init__(self, code: ConsensusErrorCode, message: str = ""):
        self.code = code
        super().__init__(f"{code.value}: {message}" if message else code.value)


@dataclass(frozen=True)
class ConsensusConfig:
    slot_duration_ms: int = 60_000   # one block per minute
    max_block_txs: int = 100
    zero_prefix_bits: int | None = None  # None: floor(log2(max(N, 2))) of staker count
    min_fee: int = 1

    def __post_init__(self):
        if self.slot_duration_ms <= 0:
            raise ValueError("slot_duration_ms must be positive")
        if self.max_block_txs < 1:
            raise ValueError("max_block_txs must be at least 1")

    def required_zero_bits(self, participant_count: int) -> int:
        if self.zero_prefix_bits is not None:
            return self.zero_prefix_bits
        return max(participant_count, 2).bit_length() - 1


def stake_table_from(state: ChainState) -> dict[str, int]:
    """Native balances that count as stake (positive holders only)."""
    return {addr: assets[NATIVE]
            for addr, assets in state.balances.items()
            if assets.get(NATIVE, 0) > 0}


def leading_zero_bits(digest: bytes) -> int:
    bits = 0
    for byte in digest:
        if byte == 0:
            bits += 8
            continue
        for shift in range(7, -1, -1):
            if byte >> shift:
                return bits + (7 - shift)
        return bits
    return bits


def select_proposer(stake_table: dict[str, int], prev_block_hash: bytes,
                    slot: int) -> str:
    """Deterministic stake-weighted draw for one slot.

    The draw value is hash(prev_hash | slot) mod total stake; the winner is
    the address whose cumulative-stake interval (in sorted address order)
    contains it, so selection frequency converges to stake share.
    """
    total = sum(stake_table.values())
    if total <= 0:
        raise ConsensusError(ConsensusErrorCode.EMPTY_STAKE)
    draw = int.from_bytes(
        hash256(prev_block_hash + struct.pack(">Q", slot)), "big") % total
    cumulative = 0
    for addr in sorted(stake_table, key=lambda a: decode_address(a).raw):
        cumulative += stake_table[addr]
        if draw < cumulative:
            return addr
    raise AssertionError("unreachable: draw below total stake")


def _grind_nonce(header: BlockHeader, required_bits: int) -> BlockHeader:
    nonce = 0
    while True:
        candidate = replace(header, nonce=nonce)
        if leading_zero_bits(candidate.block_hash()) >= required_bits:
            return candidate
        nonce += 1


def produce_block(mempool_txs: Iterable[Transaction], parent_hash: bytes,
                  parent_header: BlockHeader, parent_state: ChainState,
                  slot: int, generator: KeyPair, config: ConsensusConfig,
                  snapshot_source: SnapshotSource) -> Block:
    """Assemble, sign and grind this slot's block.

    Candidates are taken in (fee descending, tx id ascending) order, skipping
    expired or contextually invalid ones, up to the block capacity. Raises
    NOT_PROPOSER unless the generator holds this slot.
    """
    stake = stake_table_from(parent_state)
    scheduled = select_proposer(stake, parent_hash, slot)
    generator_addr = str(generator.address)
    if generator_addr != scheduled:
        raise ConsensusError(ConsensusErrorCode.NOT_PROPOSER,
                             f"slot {slot} belongs to {scheduled}")

    wall_ms = slot * config.slot_duration_ms
    candidates = sorted(mempool_txs, key=lambda t: (-t.fee, tx_id(t)))
    scratch = parent_state.clone()
    height = parent_header.height + 1
    chosen: list[Transaction] = []
    for t in candidates:
        if len(chosen) >= config.max_block_txs:
            break
        if expiry_ms(t) < wall_ms:
            continue
        probe = scratch.clone()
        try:
            apply_tx(probe, t, height, slot, generator_addr, snapshot_source)
        except Exception:
            continue
        scratch = probe
        chosen.append(t)

    header = BlockHeader(
        height=height,
        slot=slot,
        prev_hash=parent_hash,
        generator_id=generator.address,
        generator_pk=generator.public_key,
        payload_root=payload_root([tx_id(t) for t in chosen]),
        tx_count=len(chosen),
    )
    header = replace(header, signature=sign(generator.secret_key,
                                            header.signing_bytes()))
    header = _grind_nonce(header, config.required_zero_bits(len(stake)))
    return Block(header, list(chosen))


def validate_block_header(header: BlockHeader, block_hash: bytes,
                          parent_header: BlockHeader,
                          stake_table: dict[str, int], config: ConsensusConfig):
    """Checks proposer schedule, header signature, slot order and zero prefix."""
    if header.slot <= parent_header.slot:
        raise ConsensusError(ConsensusErrorCode.SLOT_REGRESSION,
                             f"slot {header.slot} after {parent_header.slot}")
    scheduled = select_proposer(stake_table, header.prev_hash, header.slot)
    if str(header.generator_id) != scheduled:
        raise ConsensusError(ConsensusErrorCode.WRONG_PROPOSER,
                             f"expected {scheduled}")
    if str(derive_address(header.generator_pk)) != str(header.generator_id):
        raise ConsensusError(ConsensusErrorCode.WRONG_PROPOSER,
                             "generator key does not match generator id")
    if not verify(header.generator_pk, header.signing_bytes(), header.signature):
        raise ConsensusError(ConsensusErrorCode.BAD_HEADER_SIGNATURE)
    required = config.required_zero_bits(len(stake_table))
    if leading_zero_bits(block_hash) < required:
        raise ConsensusError(ConsensusErrorCode.INSUFFICIENT_ZERO_PREFIX,
                             f"needs {required} zero bits")
