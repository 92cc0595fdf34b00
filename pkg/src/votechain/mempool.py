"""Pending-transaction pool with reject-on-arrival conflict policy.

The pool keeps a scratch state = canonical state + every pooled tx applied in
arrival order; a submission that fails against the scratch state is rejected
with the chain's own error code, so a second vote from the same address for
the same poll bounces while the first is still pending.
"""

from __future__ import annotations

from .chain import ChainError, ChainErrorCode, ChainState, SnapshotSource, apply_tx
from .crypto import b58encode
from .tx import Transaction, expiry_ms, tx_id


class ExpiredTx(Exception):
    """Submitted past timestamp + deadline, or evicted by the slot clock."""


class Mempool:
    def __init__(self):
        self.txs: dict[str, Transaction] = {}

    def __len__(self) -> int:
        return len(self.txs)

    def __contains__(self, txid: str) -> bool:
        return txid in self.txs

    def _rebuild_scratch(self, state: ChainState, snapshot_source: SnapshotSource):
        """Re-apply pooled txs on a fresh canonical state, dropping losers."""
        scratch = state.clone()
        next_height = state.height + 1
        next_slot = state.slot + 1
        surviving: dict[str, Transaction] = {}
        for txid, t in self.txs.items():
            probe = scratch.clone()
            try:
                apply_tx(probe, t, next_height, next_slot, "", snapshot_source)
            except ChainError:
                continue
            scratch = probe
            surviving[txid] = t
        self.txs = surviving
        self._scratch = scratch

    def submit(self, t: Transaction, state: ChainState, now_ms: int,
               snapshot_source: SnapshotSource) -> str:
        """Pool a stateless-valid tx after contextual checks; returns its id.

        Raises ExpiredTx past the deadline, ChainError for balance, vote
        conflicts and the rest of the contextual rules.
        """
        txid = b58encode(tx_id(t))
        if txid in self.txs:
            return txid  # idempotent resubmission
        if expiry_ms(t) < now_ms:
            raise ExpiredTx(txid)
        if not hasattr(self, "_scratch"):
            self._rebuild_scratch(state, snapshot_source)
        probe = self._scratch.clone()
        apply_tx(probe, t, state.height + 1, state.slot + 1, "", snapshot_source)
        self._scratch = probe
        self.txs[txid] = t
        return txid

    def ordered(self, now_ms: int) -> list[Transaction]:
        """Inclusion candidates: fee descending, tx id ascending, unexpired."""
        live = [t for t in self.txs.values() if expiry_ms(t) >= now_ms]
        return sorted(live, key=lambda t: (-t.fee, tx_id(t)))

    def on_new_state(self, state: ChainState, now_ms: int,
                     snapshot_source: SnapshotSource):
        """Drop confirmed, conflicting and expired txs after a tip change."""
        self.txs = {
            txid: t for txid, t in self.txs.items()
            if txid not in state.tx_index and expiry_ms(t) >= now_ms
        }
        self._rebuild_scratch(state, snapshot_source)
