"""Deterministic in-process multi-node network simulator.

A single-threaded discrete-event loop drives virtual time in milliseconds.
Every honest node runs the full chain + consensus + mempool stack; nodes talk
only through simulated messages (block broadcast, per-slot tip gossip and a
chain-sync request/response), with per-link latency and FIFO delivery.
Partitions drop messages between groups at send time. Identical configs,
including the seed, replay to bit-identical reports.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field, replace

from .chain import (
    Block,
    Chain,
    ChainError,
    ChainState,
    build_genesis,
    genesis_asset_id,
)
from .consensus import (
    ConsensusConfig,
    ConsensusError,
    produce_block,
    select_proposer,
    stake_table_from,
    validate_block_header,
)
from .consensus import leading_zero_bits
from .crypto import KeyPair, b58encode, decode_address, generate_keys, hash256
from .mempool import ExpiredTx, Mempool
from .tally import tally_json
from .tx import (
    BLANK_ANSWER,
    MinBalance,
    PollCreationTx,
    Transaction,
    TransferTx,
    TxValidationError,
    Whitelist,
    WeightModel,
    make_vote_tx,
    parse,
    sign_tx,
    tx_id,
)

DEFAULT_STAKE = 1_000_000
DEFAULT_VOTER_FUNDS = 1_000


class ConfigInvalid(ValueError):
    pass


@dataclass(frozen=True)
class Partition:
    start_slot: int
    end_slot: int           # exclusive
    groups: tuple[tuple[int, ...], ...]


@dataclass
class SimConfig:
    node_count: int = 4
    rng_seed: int = 0
    slots: int = 10
    latency_ms: int | dict = 10   # fixed, or per-link {"0-1": ms} with fallback
    stakes: list[int] | None = None
    voters: int = 0
    voter_funds: int = DEFAULT_VOTER_FUNDS
    assets: list[dict] = field(default_factory=list)
    partitions: list[Partition] = field(default_factory=list)
    actions: list[dict] = field(default_factory=list)
    consensus: ConsensusConfig = field(default_factory=ConsensusConfig)

    @classmethod
    def from_dict(cls, doc: dict) -> "SimConfig":
        known = {"node_count", "rng_seed", "slots", "latency_ms", "stakes",
                 "voters", "voter_funds", "assets", "partitions", "actions",
                 "consensus"}
        unknown = set(doc) - known
        if unknown:
            raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
        partitions = [
            Partition(p["start_slot"], p["end_slot"],
                      tuple(tuple(g) for g in p["groups"]))
            for p in doc.get("partitions", [])
        ]
        consensus = ConsensusConfig(**doc.get("consensus", {}))
        cfg = cls(
            node_count=doc.get("node_count", 4),
            rng_seed=doc.get("rng_seed", 0),
            slots=doc.get("slots", 10),
            latency_ms=doc.get("latency_ms", 10),
            stakes=doc.get("stakes"),
            voters=doc.get("voters", 0),
            voter_funds=doc.get("voter_funds", DEFAULT_VOTER_FUNDS),
            assets=doc.get("assets", []),
            partitions=partitions,
            actions=doc.get("actions", []),
            consensus=consensus,
        )
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path: str) -> "SimConfig":
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigInvalid(f"scenario file is not valid JSON: {exc}")
        return cls.from_dict(doc)

    def validate(self):
        if self.node_count < 1:
            raise ConfigInvalid("node_count must be at least 1")
        if self.slots < 1:
            raise ConfigInvalid("slots must be at least 1")
        latencies = (self.latency_ms.values()
                     if isinstance(self.latency_ms, dict) else [self.latency_ms])
        for lat in latencies:
            if lat < 0 or lat >= self.consensus.slot_duration_ms:
                raise ConfigInvalid("latency must be within one slot")
        if self.stakes is not None and len(self.stakes) != self.node_count:
            raise ConfigInvalid("stakes must list one stake per node")
        everyone = set(range(self.node_count))
        for p in self.partitions:
            if p.start_slot >= p.end_slot:
                raise ConfigInvalid("empty partition window")
            members = [n for g in p.groups for n in g]
            if sorted(members) != sorted(everyone):
                raise ConfigInvalid("partition groups must cover every node exactly once")


# --- identities ---

def node_keypair(seed: int, node_id: int) -> KeyPair:
    return generate_keys(hash256(f"{seed}:node:{node_id}".encode()))


def voter_keypair(seed: int, voter_id: int) -> KeyPair:
    return generate_keys(hash256(f"{seed}:voter:{voter_id}".encode()))


class SimNode:
    """One honest participant: chain store, mempool and producer key."""

    def __init__(self, sim: "Simulation", node_id: int, keypair: KeyPair,
                 genesis: tuple[Block, ChainState], config: ConsensusConfig):
        self.sim = sim
        self.node_id = node_id
        self.keypair = keypair
        self.config = config
        genesis_block, genesis_state = genesis
        self.chain = Chain(
            genesis_block, genesis_state,
            slot_duration_ms=config.slot_duration_ms,
            max_block_txs=config.max_block_txs,
            header_validator=self._validate_header,
        )
        self.mempool = Mempool()
        self.produced: list[bytes] = []

    def _validate_header(self, header, block_hash, parent_header, parent_state):
        validate_block_header(header, block_hash, parent_header,
                              stake_table_from(parent_state), self.config)

    def _snapshot_source(self, branch_tip: bytes):
        return lambda h: self.chain.branch_state_at(branch_tip, h)

    def submit(self, t: Transaction) -> tuple[bool, str]:
        """Mempool submission; returns (accepted, code)."""
        try:
            txid = self.mempool.submit(
                t, self.chain.canonical_state(), self.sim.now,
                self._snapshot_source(self.chain.tip))
            return True, txid
        except ExpiredTx:
            return False, "EXPIRED"
        except ChainError as exc:
            return False, exc.code.value
        except TxValidationError as exc:
            return False, exc.code.value

    def submit_raw(self, raw: bytes) -> tuple[bool, str]:
        try:
            t = parse(raw)
        except TxValidationError as exc:
            return False, exc.code.value
        return self.submit(t)

    def receive_block(self, src: int, block: Block):
        old_tip = self.chain.tip
        try:
            self.chain.add_block(block)
        except ChainError as exc:
            if exc.code.value == "UNKNOWN_PARENT":
                self.sim.send(self.node_id, src, ("get_chain",))
            return
        except ConsensusError:
            return
        if self.chain.tip != old_tip:
            self._after_tip_change()
            self.sim.broadcast_tip(self.node_id)

    def receive_tip(self, src: int, tip_hash: bytes, height: int):
        if self.chain.has_block(tip_hash):
            return
        mine = (self.chain.height(), self.chain.tip)
        if (-height, tip_hash) < (-mine[0], mine[1]):
            self.sim.send(self.node_id, src, ("get_chain",))

    def receive_chain(self, blocks: list[Block]):
        old_tip = self.chain.tip
        for block in blocks:
            if self.chain.has_block(block.block_hash()):
                continue
            try:
                self.chain.add_block(block)
            except (ChainError, ConsensusError):
                continue
        if self.chain.tip != old_tip:
            self._after_tip_change()
            self.sim.broadcast_tip(self.node_id)

    def _after_tip_change(self):
        self.mempool.on_new_state(self.chain.canonical_state(), self.sim.now,
                                  self._snapshot_source(self.chain.tip))

    def on_message(self, src: int, msg: tuple):
        kind = msg[0]
        if kind == "block":
            self.receive_block(src, msg[1])
        elif kind == "tx":
            self.submit(msg[1])  # gossiped tx; rejections are silent
        elif kind == "tip":
            self.receive_tip(src, msg[1], msg[2])
        elif kind == "get_chain":
            self.sim.send(self.node_id, src,
                          ("chain", list(self.chain.canonical_blocks())))
        elif kind == "chain":
            self.receive_chain(msg[1])

    def on_tick(self, slot: int):
        parent_hash = self.chain.tip
        parent_state = self.chain.canonical_state()
        stake = stake_table_from(parent_state)
        scheduled = select_proposer(stake, parent_hash, slot)
        if scheduled != str(self.keypair.address):
            self.sim.broadcast_tip(self.node_id)
            return
        block = produce_block(
            self.mempool.ordered(self.sim.now), parent_hash,
            self.chain.tip_header(), parent_state, slot, self.keypair,
            self.config, self._snapshot_source(parent_hash))
        self.chain.add_block(block)
        self.produced.append(block.block_hash())
        self._after_tip_change()
        self.sim.record_production(self.node_id, slot, block)
        self.sim.broadcast_block(self.node_id, block)
        self.sim.broadcast_tip(self.node_id)


@dataclass
class SimReport:
    seed: int
    node_count: int
    slots_run: int
    node_tips: list[tuple[str, int, int]]      # (tip b58, height, slot)
    converged: bool
    convergence_slot: int | None
    polls: list[dict]
    confirmed_txs: int
    rejected_submissions: list[tuple[int, int, str]]  # (slot, node, code)
    equivocations: list[tuple[int, str]]
    violations: list[str]

    def to_text(self) -> str:
        lines = [f"seed={self.seed} nodes={self.node_count} slots={self.slots_run}"]
        for i, (tip, height, slot) in enumerate(self.node_tips):
            lines.append(f"node {i} tip={tip} height={height} slot={slot}")
        conv = self.convergence_slot if self.convergence_slot is not None else "-"
        lines.append(f"converged={str(self.converged).lower()} convergence_slot={conv}")
        for poll in self.polls:
            totals = ",".join(str(a["total"]) for a in poll["answers"])
            lines.append(
                f"poll {poll['pollId']} status={poll['status']} "
                f"counted={poll['countedVotes']} blanks={poll['blankVotes']} "
                f"totals=[{totals}]")
        lines.append(f"confirmed_txs={self.confirmed_txs}")
        for slot, node, code in self.rejected_submissions:
            lines.append(f"rejected slot={slot} node={node} code={code}")
        for slot, generator in self.equivocations:
            lines.append(f"equivocation slot={slot} generator={generator}")
        if self.violations:
            lines.extend(f"violation: {v}" for v in self.violations)
        else:
            lines.append("violations: none")
        return "\n".join(lines) + "\n"


_PRIORITY_DELIVER = 0
_PRIORITY_ACTION = 1
_PRIORITY_TICK = 2


class Simulation:
    def __init__(self, config: SimConfig):
        config.validate()
        self.config = config
        self.now = 0
        self._seq = 0
        self._events: list[tuple] = []
        self.poll_refs: dict[str, bytes] = {}
        self.rejections: list[tuple[int, int, str]] = []
        self.equivocations: list[tuple[int, str]] = []
        self.violations: list[str] = []
        self._production: dict[tuple[str, int], set[bytes]] = {}
        self._tip_log: list[tuple[int, list[bytes]]] = []
        self._equivocate_slots: set[int] = set()

        self.node_keys = [node_keypair(config.rng_seed, i)
                          for i in range(config.node_count)]
        self.voter_keys = [voter_keypair(config.rng_seed, j)
                           for j in range(config.voters)]
        genesis_doc = self._genesis_doc()
        self.genesis = build_genesis(genesis_doc)
        self.nodes = [SimNode(self, i, self.node_keys[i], self.genesis,
                              config.consensus)
                      for i in range(config.node_count)]

        for slot in range(1, config.slots + 1):
            self._push(slot * config.consensus.slot_duration_ms,
                       _PRIORITY_TICK, ("tick", slot))
        for action in config.actions:
            at = action.get("at_slot", 1) * config.consensus.slot_duration_ms
            self._push(at, _PRIORITY_ACTION, ("action", action))

    # -- wiring --

    def _genesis_doc(self) -> dict:
        cfg = self.config
        stakes = cfg.stakes or [DEFAULT_STAKE] * cfg.node_count
        allocations = {str(kp.address): stakes[i]
                       for i, kp in enumerate(self.node_keys)}
        for kp in self.voter_keys:
            allocations[str(kp.address)] = allocations.get(str(kp.address), 0) \
                + cfg.voter_funds
        assets = []
        for spec in cfg.assets:
            assets.append({
                "name": spec["name"],
                "allocations": {
                    str(self._resolve_key(ref).address): amount
                    for ref, amount in spec.get("allocations", {}).items()
                },
            })
        return {"native_allocations": allocations, "assets": assets}

    def _resolve_key(self, ref: str) -> KeyPair:
        kind, _, idx = ref.partition(":")
        if kind == "node":
            return self.node_keys[int(idx)]
        if kind == "voter":
            return self.voter_keys[int(idx)]
        raise ConfigInvalid(f"unknown identity ref {ref!r}")

    def _resolve_address(self, ref: str) -> str:
        if ":" in ref:
            return str(self._resolve_key(ref).address)
        return ref

    def _push(self, time_ms: int, priority: int, payload: tuple):
        self._seq += 1
        heapq.heappush(self._events, (time_ms, priority, self._seq, payload))

    # -- network fabric --

    def current_slot(self) -> int:
        return self.now // self.config.consensus.slot_duration_ms

    def reachable(self, a: int, b: int, slot: int) -> bool:
        for p in self.config.partitions:
            if p.start_slot <= slot < p.end_slot:
                for group in p.groups:
                    if a in group:
                        return b in group
        return True

    def latency(self, src: int, dst: int) -> int:
        if isinstance(self.config.latency_ms, dict):
            table = self.config.latency_ms
            key, rev = f"{src}-{dst}", f"{dst}-{src}"
            return table.get(key, table.get(rev, table.get("default", 10)))
        return self.config.latency_ms

    def send(self, src: int, dst: int, msg: tuple):
        if src == dst:
            return
        if not self.reachable(src, dst, self.current_slot()):
            return  # partitioned links drop traffic
        self._push(self.now + self.latency(src, dst), _PRIORITY_DELIVER,
                   ("deliver", src, dst, msg))

    def broadcast_block(self, src: int, block: Block):
        for dst in range(self.config.node_count):
            self.send(src, dst, ("block", block))

    def broadcast_tx(self, src: int, t: Transaction):
        for dst in range(self.config.node_count):
            self.send(src, dst, ("tx", t))

    def broadcast_tip(self, src: int):
        node = self.nodes[src]
        for dst in range(self.config.node_count):
            self.send(src, dst, ("tip", node.chain.tip, node.chain.height()))

    def record_production(self, node_id: int, slot: int, block: Block):
        key = (str(block.header.generator_id), slot)
        seen = self._production.setdefault(key, set())
        seen.add(block.block_hash())
        if len(seen) > 1:
            self.violations.append(
                f"honest equivocation by node {node_id} at slot {slot}")

    # -- adversary --

    def inject_adversary(self, script: list[dict]):
        """Schedule extra adversarial actions (same schema as config actions)."""
        for action in script:
            at = action.get("at_slot", 1) * self.config.consensus.slot_duration_ms
            self._push(at, _PRIORITY_ACTION, ("action", action))

    def _equivocate(self, slot: int):
        """The scheduled proposer signs two different blocks for one slot and
        shows each half of the network a different one."""
        proposer_id = None
        for i, node in enumerate(self.nodes):
            state = node.chain.canonical_state()
            scheduled = select_proposer(stake_table_from(state), node.chain.tip, slot)
            if scheduled == str(node.keypair.address):
                proposer_id = i
                break
        if proposer_id is None:
            return
        node = self.nodes[proposer_id]
        block_a = produce_block(
            node.mempool.ordered(self.now), node.chain.tip, node.chain.tip_header(),
            node.chain.canonical_state(), slot, node.keypair, node.config,
            node._snapshot_source(node.chain.tip))
        # Second, conflicting block: keep grinding past the first nonce. The
        # nonce sits outside the signed region, so both carry valid signatures.
        required = node.config.required_zero_bits(
            len(stake_table_from(node.chain.canonical_state())))
        nonce = block_a.header.nonce + 1
        while True:
            header_b = replace(block_a.header, nonce=nonce)
            if leading_zero_bits(header_b.block_hash()) >= required:
                break
            nonce += 1
        block_b = Block(header_b, list(block_a.transactions))
        self.equivocations.append((slot, str(block_a.header.generator_id)))

        node.chain.add_block(block_a)
        node.produced.append(block_a.block_hash())
        node._after_tip_change()
        self.record_production(proposer_id, slot, block_a)
        peers = [d for d in range(self.config.node_count) if d != proposer_id]
        half = len(peers) // 2
        for dst in peers[:half]:
            self.send(proposer_id, dst, ("block", block_a))
        for dst in peers[half:]:
            self.send(proposer_id, dst, ("block", block_b))

    # -- actions --

    def _tx_timestamp(self, action: dict) -> int:
        if "timestamp_slot" in action:  # backdate, e.g. to test expiry
            return action["timestamp_slot"] * self.config.consensus.slot_duration_ms
        return self.now

    def _craft_transfer(self, action: dict) -> TransferTx:
        sender = self._resolve_key(action["from"])
        asset_ref = action.get("asset")
        to = str(action["to"])
        recipient = self._resolve_key(to).address if ":" in to else decode_address(to)
        t = TransferTx(
            sender_pk=sender.public_key,
            recipient=recipient,
            amount=action["amount"],
            fee=action.get("fee", 1),
            timestamp=self._tx_timestamp(action),
            asset_id=genesis_asset_id(asset_ref) if asset_ref else None,
            deadline_minutes=action.get("deadline_minutes", 60),
        )
        return sign_tx(sender.secret_key, t)

    def _craft_poll(self, action: dict) -> PollCreationTx:
        creator = self._resolve_key(action["creator"])
        elig_spec = action.get("eligibility", {"kind": "min_balance", "threshold": 0})
        if elig_spec["kind"] == "whitelist":
            eligibility = Whitelist(tuple(
                self._resolve_key(ref).address for ref in elig_spec["who"]))
        else:
            asset = elig_spec.get("asset")
            eligibility = MinBalance(
                threshold=elig_spec.get("threshold", 0),
                asset_id=genesis_asset_id(asset) if asset else None)
        weight_model = WeightModel[action.get("weight_model", "ACCOUNT")]
        weight_asset = action.get("weight_asset")
        weight_asset_id = genesis_asset_id(weight_asset) if weight_asset else None
        t = PollCreationTx(
            sender_pk=creator.public_key,
            question=action["question"].encode(),
            answers=tuple(a.encode() for a in action["answers"]),
            score_min=action.get("score_min", 0),
            score_max=action.get("score_max", 1),
            weight_model=weight_model,
            eligibility=eligibility,
            snapshot_height=action.get("snapshot_height", 0),
            close_slot=action["close_slot"],
            fee=action.get("fee", 2),
            timestamp=self.now,
            weight_asset_id=weight_asset_id,
        )
        return sign_tx(creator.secret_key, t)

    def _craft_vote(self, action: dict, voter_ref: str, answer, score: int,
                    fee: int) -> TransferTx:
        voter = self._resolve_key(voter_ref)
        poll_id = self.poll_refs[action["poll"]]
        answer_index = BLANK_ANSWER if answer == "blank" else int(answer)
        t = make_vote_tx(voter.public_key, poll_id, answer_index, score,
                         fee=fee, timestamp=self.now,
                         deadline_minutes=action.get("deadline_minutes", 60))
        return sign_tx(voter.secret_key, t)

    def _submit_and_gossip(self, node_id: int, t: Transaction):
        slot = self.current_slot()
        ok, code = self.nodes[node_id].submit(t)
        if ok:
            self.broadcast_tx(node_id, t)
        else:
            self.rejections.append((slot, node_id, code))

    def _run_action(self, action: dict):
        kind = action["kind"]
        slot = self.current_slot()
        if kind == "transfer":
            self._submit_and_gossip(action.get("node", 0),
                                    self._craft_transfer(action))
        elif kind == "create_poll":
            t = self._craft_poll(action)
            self.poll_refs[action.get("ref", f"poll{len(self.poll_refs)}")] = tx_id(t)
            self._submit_and_gossip(action.get("node", 0), t)
        elif kind == "vote":
            t = self._craft_vote(action, action["voter"], action["answer"],
                                 action.get("score", 1), action.get("fee", 1))
            self._submit_and_gossip(action.get("node", 0), t)
        elif kind == "conflicting_votes":
            for leg in action["votes"]:
                t = self._craft_vote(action, action["voter"], leg["answer"],
                                     leg.get("score", 1), leg.get("fee", 1))
                self._submit_and_gossip(leg["node"], t)
        elif kind == "malformed":
            raw = bytes.fromhex(action["bytes_hex"]) if "bytes_hex" in action \
                else hash256(f"junk:{self._seq}".encode()) * 3
            for node in self.nodes:
                ok, code = node.submit_raw(raw)
                if ok:
                    self.violations.append(
                        f"malformed tx accepted by node {node.node_id}")
                else:
                    self.rejections.append((slot, node.node_id, code))
        elif kind == "equivocate":
            self._equivocate_slots.add(action.get("at_slot", slot))
        else:
            raise ConfigInvalid(f"unknown action kind {kind!r}")

    # -- main loop --

    def _tick(self, slot: int):
        self._tip_log.append((slot, [node.chain.tip for node in self.nodes]))
        if slot in self._equivocate_slots:
            self._equivocate(slot)
            for node in self.nodes:
                self.broadcast_tip(node.node_id)
        else:
            for node in self.nodes:
                node.on_tick(slot)
        self._check_conservation(slot)

    def _check_conservation(self, slot: int):
        for node in self.nodes:
            state = node.chain.canonical_state()
            total = state.total_native() + state.total_fees_credited()
            if total != state.genesis_supply:
                self.violations.append(
                    f"conservation broken on node {node.node_id} at slot {slot}: "
                    f"{total} != {state.genesis_supply}")

    def run(self) -> SimReport:
        while self._events:
            time_ms, _priority, _seq, payload = heapq.heappop(self._events)
            self.now = time_ms
            if payload[0] == "deliver":
                _, src, dst, msg = payload
                self.nodes[dst].on_message(src, msg)
            elif payload[0] == "action":
                self._run_action(payload[1])
            elif payload[0] == "tick":
                self._tick(payload[1])
        self._tip_log.append((self.config.slots + 1,
                              [node.chain.tip for node in self.nodes]))
        return self._build_report()

    # -- reporting --

    def _convergence_slot(self) -> int | None:
        """First slot at whose start all tips agree and stay agreed."""
        last_good = None
        for slot, tips in reversed(self._tip_log):
            if len(set(tips)) != 1:
                break
            last_good = slot
        return last_good

    def _check_tally_agreement(self, reference: ChainState):
        for pid, tally in reference.results.items():
            for node in self.nodes[1:]:
                other = node.chain.canonical_state().results.get(pid)
                if other is not None and other != tally:
                    self.violations.append(
                        f"nodes disagree on finalized tally for {pid}")

    def _build_report(self) -> SimReport:
        tips = [(b58encode(n.chain.tip), n.chain.height(),
                 n.chain.tip_header().slot) for n in self.nodes]
        converged = len({t[0] for t in tips}) == 1
        reference = self.nodes[0].chain.canonical_state()
        if converged:
            self._check_tally_agreement(reference)
        polls = []
        for pid in sorted(reference.polls):
            poll = reference.polls[pid]
            tally = reference.results.get(pid)
            row = {"pollId": pid, "status": poll.status}
            if tally is not None:
                row.update(tally_json(tally, poll))
            else:
                row.update({"answers": [], "countedVotes": len(reference.votes[pid]),
                            "blankVotes": 0})
            polls.append(row)
        confirmed = len(reference.tx_index)
        return SimReport(
            seed=self.config.rng_seed,
            node_count=self.config.node_count,
            slots_run=self.config.slots,
            node_tips=tips,
            converged=converged,
            convergence_slot=self._convergence_slot(),
            polls=polls,
            confirmed_txs=confirmed,
            rejected_submissions=list(self.rejections),
            equivocations=list(self.equivocations),
            violations=list(self.violations),
        )


def run_scenario(config: SimConfig | dict) -> SimReport:
    if isinstance(config, dict):
        config = SimConfig.from_dict(config)
    return Simulation(config).run()
