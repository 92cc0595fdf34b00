"""Independent recount walker used as the tally and conservation oracle.

Deliberately shares no state-transition code with votechain.chain or
votechain.tally: it replays balances block by block with its own bookkeeping,
keeps the full per-height history, and recounts every poll by walking the
canonical votes and multiplying weights by scores. Exact integers throughout.
"""

from votechain.chain import PrunedVoteTx
from votechain.crypto import b58encode, derive_address
from votechain.tx import (
    BLANK_ANSWER,
    IssueTx,
    PollCreationTx,
    TransferTx,
    WeightModel,
    parse_vote_attachment,
    tx_id,
)

NATIVE = "native"


class OracleViolation(AssertionError):
    """The canonical chain itself breaks a safety rule (e.g. a double vote)."""


class RecountOracle:
    def __init__(self, genesis_doc: dict):
        self.balances = {}   # addr -> {asset -> int}
        self.fees_total = 0
        self.genesis_supply = 0
        self.history = []    # index = height, value = deep copy of balances
        self.polls = {}      # poll id b58 -> definition dict
        self.votes = {}      # poll id b58 -> {voter -> (answer_index, score)}

        for addr, amount in genesis_doc.get("native_allocations", {}).items():
            self._credit(addr, NATIVE, amount)
            self.genesis_supply += amount
        for asset in genesis_doc.get("assets", []):
            from votechain.chain import genesis_asset_id
            key = b58encode(genesis_asset_id(asset["name"]))
            for addr, amount in asset.get("allocations", {}).items():
                self._credit(addr, key, amount)
        self.history.append(self._snapshot())

    def _credit(self, addr, asset, amount):
        self.balances.setdefault(addr, {})
        self.balances[addr][asset] = self.balances[addr].get(asset, 0) + amount

    def _debit(self, addr, asset, amount):
        have = self.balances.get(addr, {}).get(asset, 0)
        if have < amount:
            raise OracleViolation(f"negative balance for {addr}")
        self.balances[addr][asset] = have - amount

    def _snapshot(self):
        return {a: dict(assets) for a, assets in self.balances.items()}

    def walk(self, blocks):
        """Replay a canonical block list (must start at genesis, height 0)."""
        for block in blocks:
            if block.header.height == 0:
                continue  # genesis carries no transactions
            if block.header.height != len(self.history):
                raise OracleViolation("blocks out of order")
            for t in block.transactions:
                self._apply(t, block.header.height)
            self.history.append(self._snapshot())
        return self

    def _apply(self, t, height):
        if isinstance(t, PrunedVoteTx):
            raise OracleViolation("cannot recount a pruned chain")
        sender = str(derive_address(t.sender_pk))
        self._debit(sender, NATIVE, t.fee)
        self.fees_total += t.fee
        if isinstance(t, TransferTx):
            asset = b58encode(t.asset_id) if t.asset_id else NATIVE
            self._debit(sender, asset, t.amount)
            self._credit(str(t.recipient), asset, t.amount)
            vote = parse_vote_attachment(t.attachment)
            if vote is not None:
                pid = b58encode(vote[0])
                if pid not in self.polls:
                    raise OracleViolation(f"vote for unregistered poll {pid}")
                if sender in self.votes[pid]:
                    raise OracleViolation(f"double vote by {sender} on {pid}")
                self.votes[pid][sender] = (vote[1], vote[2])
        elif isinstance(t, IssueTx):
            self._credit(sender, b58encode(tx_id(t)), t.quantity)
        elif isinstance(t, PollCreationTx):
            pid = b58encode(tx_id(t))
            self.polls[pid] = {
                "answers": len(t.answers),
                "weight_model": t.weight_model,
                "weight_asset": b58encode(t.weight_asset_id)
                if t.weight_asset_id else None,
                "snapshot_height": min(t.snapshot_height, height - 1),
            }
            self.votes[pid] = {}

    def conservation_holds(self):
        total = sum(assets.get(NATIVE, 0) for assets in self.balances.values())
        return total + self.fees_total == self.genesis_supply

    def weight_of(self, pid, voter):
        poll = self.polls[pid]
        if poll["weight_model"] == WeightModel.ACCOUNT:
            return 1
        if poll["weight_model"] == WeightModel.ACCOUNT_BALANCE:
            asset = NATIVE
        else:
            asset = poll["weight_asset"]
        at = self.history[poll["snapshot_height"]]
        return at.get(voter, {}).get(asset, 0)

    def recount(self, pid):
        """Totals, per-answer counts and blank count for one poll."""
        poll = self.polls[pid]
        totals = [0] * poll["answers"]
        counts = [0] * poll["answers"]
        blanks = 0
        for voter, (answer_index, score) in self.votes[pid].items():
            if answer_index == BLANK_ANSWER:
                blanks += 1
                continue
            totals[answer_index] += self.weight_of(pid, voter) * score
            counts[answer_index] += 1
        return tuple(totals), tuple(counts), blanks
