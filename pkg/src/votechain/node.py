"""Single-node service: genesis pinning, block persistence, mempool and slots.

Persistence layout under the data directory:
  meta.json   pinned genesis hash plus last tip/height/slot
  blocks.dat  append-only records, 4-byte big-endian length + block bytes,
              in arrival order (fork blocks included; replay rebuilds the
              same fork choice). Pruning compacts the file in place.
  state.json  canonical state snapshot, written on every tip change; its
              hash is the state root reported by the API
"""

from __future__ import annotations

import json
import os
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path

from .chain import Chain, build_genesis, parse_block
from .consensus import (
    ConsensusConfig,
    ConsensusError,
    ConsensusErrorCode,
    produce_block,
    stake_table_from,
    validate_block_header,
)
from .crypto import b58decode, b58encode, generate_keys, hash256
from .mempool import Mempool
from .tally import Tally
from .tx import Transaction, TxErrorCode, TxValidationError, parse


class NodeStartupError(RuntimeError):
    pass


@dataclass
class NodeConfig:
    data_dir: str
    genesis: dict
    host: str = "127.0.0.1"
    port: int = 8645
    api_token: str | None = None
    generator_seed_hex: str | None = None
    consensus: ConsensusConfig = field(default_factory=ConsensusConfig)

    @classmethod
    def from_file(cls, path: str) -> "NodeConfig":
        """Plain-text JSON config; VOTECHAIN_PORT and VOTECHAIN_DATA_DIR
        environment variables override the file."""
        with open(path) as fh:
            doc = json.load(fh)
        genesis = doc.get("genesis")
        if genesis is None:
            genesis_path = doc["genesis_path"]
            if not os.path.isabs(genesis_path):
                genesis_path = os.path.join(os.path.dirname(path), genesis_path)
            with open(genesis_path) as fh:
                genesis = json.load(fh)
        consensus = ConsensusConfig(**doc.get("consensus", {}))
        return cls(
            data_dir=os.environ.get("VOTECHAIN_DATA_DIR", doc["data_dir"]),
            genesis=genesis,
            host=doc.get("host", "127.0.0.1"),
            port=int(os.environ.get("VOTECHAIN_PORT", doc.get("port", 8645))),
            api_token=doc.get("api_token"),
            generator_seed_hex=doc.get("generator_seed_hex"),
            consensus=consensus,
        )


def state_root(state) -> str:
    doc = json.dumps(state.to_json(), sort_keys=True, separators=(",", ":"))
    return b58encode(hash256(doc.encode()))


class NodeService:
    """Owns the chain, the mempool and the slot clock; single-writer locked."""

    def __init__(self, config: NodeConfig):
        self.config = config
        self.lock = threading.RLock()
        self.data_dir = Path(config.data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.generator = (generate_keys(bytes.fromhex(config.generator_seed_hex))
                          if config.generator_seed_hex else None)

        genesis_block, genesis_state = build_genesis(config.genesis)
        self.chain = Chain(
            genesis_block, genesis_state,
            slot_duration_ms=config.consensus.slot_duration_ms,
            max_block_txs=config.consensus.max_block_txs,
            header_validator=self._validate_header,
        )
        self.mempool = Mempool()
        self._pruned_tallies: dict[str, Tally] = {}
        self._check_or_pin_genesis()
        self._replay_block_file()
        self._restore_pruned_results()
        self._verify_snapshot()
        self.current_slot = self.chain.tip_header().slot
        self._sync_mempool()

    # -- persistence --

    @property
    def _meta_path(self) -> Path:
        return self.data_dir / "meta.json"

    @property
    def _blocks_path(self) -> Path:
        return self.data_dir / "blocks.dat"

    @property
    def _state_path(self) -> Path:
        return self.data_dir / "state.json"

    def _check_or_pin_genesis(self):
        genesis_b58 = b58encode(self.chain.genesis_hash)
        if self._meta_path.exists():
            meta = json.loads(self._meta_path.read_text())
            if meta["genesis_hash"] != genesis_b58:
                raise NodeStartupError(
                    f"data directory belongs to a different chain "
                    f"(genesis {meta['genesis_hash']}, config {genesis_b58})")
            self._pruned_tallies = {
                pid: Tally(poll_id=pid, totals=tuple(doc["totals"]),
                           counts=tuple(doc["counts"]),
                           blank_votes=doc["blank_votes"],
                           finalized_at_slot=doc["finalized_at_slot"])
                for pid, doc in meta.get("pruned_polls", {}).items()
            }
        else:
            self._write_meta()

    def _write_meta(self):
        meta = {
            "genesis_hash": b58encode(self.chain.genesis_hash),
            "tip": b58encode(self.chain.tip),
            "height": self.chain.height(),
            "slot": self.chain.tip_header().slot,
            "pruned_polls": {
                pid: {"totals": list(t.totals), "counts": list(t.counts),
                      "blank_votes": t.blank_votes,
                      "finalized_at_slot": t.finalized_at_slot}
                for pid, t in self._pruned_tallies.items()
            },
        }
        self._meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True))

    def _restore_pruned_results(self):
        """Frozen tallies are the one artifact pruning leaves behind; replayed
        blocks carry no vote payloads, so re-seat the persisted results."""
        if not self._pruned_tallies:
            return
        state = self.chain.canonical_state()
        for pid, tally in self._pruned_tallies.items():
            if pid in state.polls:
                state.results[pid] = tally
                state.votes[pid] = {}

    def _write_snapshot(self):
        doc = json.dumps(self.chain.canonical_state().to_json(),
                         sort_keys=True, indent=1)
        self._state_path.write_text(doc)

    def _replay_block_file(self):
        if not self._blocks_path.exists():
            return
        data = self._blocks_path.read_bytes()
        pos = 0
        while pos + 4 <= len(data):
            (length,) = struct.unpack(">I", data[pos : pos + 4])
            record = data[pos + 4 : pos + 4 + length]
            if len(record) != length:
                raise NodeStartupError("truncated block file")
            self.chain.add_block(parse_block(record))
            pos += 4 + length

    def _verify_snapshot(self):
        if not self._state_path.exists():
            return
        stored = json.loads(self._state_path.read_text())
        replayed = self.chain.canonical_state().to_json()
        if json.dumps(stored, sort_keys=True) != json.dumps(replayed, sort_keys=True):
            raise NodeStartupError("state snapshot disagrees with block replay")

    def _append_block(self, block):
        raw = block.to_bytes()
        with open(self._blocks_path, "ab") as fh:
            fh.write(struct.pack(">I", len(raw)) + raw)

    def _rewrite_block_file(self):
        """Full compaction; used after pruning vote payloads."""
        records = []
        # preserve the original arrival order: stored insertion order of dict
        for block in self.chain.blocks.values():
            if block.header.height == 0:
                continue
            raw = block.to_bytes()
            records.append(struct.pack(">I", len(raw)) + raw)
        tmp = self._blocks_path.with_suffix(".tmp")
        tmp.write_bytes(b"".join(records))
        tmp.replace(self._blocks_path)

    # -- chain plumbing --

    def _validate_header(self, header, block_hash, parent_header, parent_state):
        validate_block_header(header, block_hash, parent_header,
                              stake_table_from(parent_state), self.config.consensus)

    def _snapshot_source(self):
        tip = self.chain.tip
        return lambda h: self.chain.branch_state_at(tip, h)

    def _sync_mempool(self):
        self.mempool.on_new_state(self.chain.canonical_state(), self.now_ms(),
                                  self._snapshot_source())

    def now_ms(self) -> int:
        return self.current_slot * self.config.consensus.slot_duration_ms

    # -- public operations (all locked) --

    def submit_raw(self, text: str, deadline_minutes: int | None = None) -> str:
        """Parse a hex/base-58 encoded signed tx and pool it; returns tx id."""
        raw = _decode_tx_body(text)
        t = parse(raw)
        if deadline_minutes is not None:
            from dataclasses import replace
            t = replace(t, deadline_minutes=deadline_minutes)
        return self.submit_tx(t)

    def submit_tx(self, t: Transaction) -> str:
        with self.lock:
            return self.mempool.submit(t, self.chain.canonical_state(),
                                       self.now_ms(), self._snapshot_source())

    def advance_to_slot(self, slot: int):
        """Move the slot clock forward, producing a block per scheduled slot."""
        with self.lock:
            while self.current_slot < slot:
                self.current_slot += 1
                self._try_produce(self.current_slot)

    def tick(self):
        self.advance_to_slot(self.current_slot + 1)

    def _try_produce(self, slot: int):
        if self.generator is None:
            return
        try:
            block = produce_block(
                self.mempool.ordered(self.now_ms()), self.chain.tip,
                self.chain.tip_header(), self.chain.canonical_state(), slot,
                self.generator, self.config.consensus, self._snapshot_source())
        except ConsensusError as exc:
            if exc.code == ConsensusErrorCode.NOT_PROPOSER:
                return
            raise
        self.chain.add_block(block)
        self._append_block(block)
        self._write_meta()
        self._write_snapshot()
        self._sync_mempool()

    def receive_block(self, block):
        """Accept an externally produced block (e.g. relayed via the CLI)."""
        with self.lock:
            self.chain.add_block(block)
            self._append_block(block)
            self.current_slot = max(self.current_slot, block.header.slot)
            self._write_meta()
            self._write_snapshot()
            self._sync_mempool()

    def prune_closed_poll(self, poll_id: str):
        with self.lock:
            tally = self.chain.prune_closed_poll(poll_id)
            self._pruned_tallies[poll_id] = tally
            self._rewrite_block_file()
            self._write_meta()
            self._write_snapshot()

    def stop(self):
        with self.lock:
            self._write_meta()
            self._write_snapshot()

    # -- read side --

    def state(self):
        return self.chain.canonical_state()

    def status(self) -> dict:
        with self.lock:
            return {
                "height": self.chain.height(),
                "tip": b58encode(self.chain.tip),
                "slot": self.current_slot,
                "stateRoot": state_root(self.chain.canonical_state()),
                "genesisHash": b58encode(self.chain.genesis_hash),
                "pooledTxs": len(self.mempool),
            }


def _decode_tx_body(text: str) -> bytes:
    text = text.strip().strip('"')
    if not text:
        raise TxValidationError(TxErrorCode.MALFORMED_BYTES, "empty body")
    hex_chars = set("0123456789abcdefABCDEF")
    if len(text) % 2 == 0 and set(text) <= hex_chars:
        return bytes.fromhex(text)
    try:
        return b58decode(text)
    except ValueError as exc:
        raise TxValidationError(TxErrorCode.MALFORMED_BYTES, str(exc)) from None
