"""Weight models, tally computation, blanks and the fairness gate."""

import random

import pytest

from chaintools import Harness
from oracle import RecountOracle
from votechain.chain import ChainState, PollRecord, VoteRecord, genesis_asset_id
from votechain.crypto import b58encode, generate_keys, hash256
from votechain.tally import (
    FairnessLocked,
    Tally,
    UnknownPoll,
    compute_tally,
    ranked_answers,
    results_view,
    tally_json,
    voter_weight,
)
from votechain.tx import BLANK_ANSWER, MinBalance, WeightModel, tx_id


def kp(label):
    return generate_keys(hash256(b"tally-key:" + label.encode()))


class TestVoterWeight:
    def test_account_model_is_flat_one(self):
        v1, v2 = kp("a"), kp("b")
        h = Harness(voters={v1: 10, v2: 99999})
        poll = h.poll(v1, weight_model=WeightModel.ACCOUNT)
        h.produce([poll])
        record = h.state().polls[b58encode(tx_id(poll))]
        assert voter_weight(h.state(), record, str(v1.address)) == 1
        assert voter_weight(h.state(), record, str(v2.address)) == 1
        assert voter_weight(h.state(), record, "unknown-address") == 1

    def test_account_balance_reads_snapshot(self):
        v = kp("rich")
        h = Harness(voters={v: 250})
        poll = h.poll(v, weight_model=WeightModel.ACCOUNT_BALANCE, snapshot_height=0)
        h.produce([poll])
        record = h.state().polls[b58encode(tx_id(poll))]
        assert voter_weight(h.state(), record, str(v.address)) == 250

    def test_tokens_acquired_after_snapshot_do_not_count(self):
        v, whale = kp("late"), kp("whale")
        h = Harness(voters={v: 10, whale: 100000})
        poll = h.poll(whale, weight_model=WeightModel.ACCOUNT_BALANCE,
                      snapshot_height=0)
        h.produce([poll])
        record = h.state().polls[b58encode(tx_id(poll))]
        before = voter_weight(h.state(), record, str(v.address))
        h.produce([h.transfer(whale, v, amount=5000)])
        record_after = h.state().polls[b58encode(tx_id(poll))]
        assert voter_weight(h.state(), record_after, str(v.address)) == before == 10

    def test_asset_balance_model(self):
        v1, v2 = kp("holder"), kp("empty")
        h = Harness(voters={v1: 100, v2: 100},
                    assets=[{"name": "RIGHT",
                             "allocations": {str(v1.address): 7}}])
        poll = h.poll(v1, weight_model=WeightModel.ASSET_BALANCE,
                      weight_asset_id=genesis_asset_id("RIGHT"))
        h.produce([poll])
        record = h.state().polls[b58encode(tx_id(poll))]
        assert voter_weight(h.state(), record, str(v1.address)) == 7
        assert voter_weight(h.state(), record, str(v2.address)) == 0

    def test_currency_balance_same_mechanics_as_asset(self):
        v1 = kp("cur")
        h = Harness(voters={v1: 100},
                    assets=[{"name": "EURT",
                             "allocations": {str(v1.address): 12}}])
        poll = h.poll(v1, weight_model=WeightModel.CURRENCY_BALANCE,
                      weight_asset_id=genesis_asset_id("EURT"))
        h.produce([poll])
        record = h.state().polls[b58encode(tx_id(poll))]
        assert voter_weight(h.state(), record, str(v1.address)) == 12


class TestComputeTally:
    def test_unit_weights_spec_example(self):
        # 3 voters, flat weights, scores all 1, answers A, A, B -> A:2, B:1
        voters = [kp(f"u{i}") for i in range(3)]
        h = Harness(voters={v: 100 for v in voters})
        poll = h.poll(voters[0], score_min=0, score_max=1)
        h.produce([poll])
        h.produce([h.vote(voters[0], poll, 0, 1),
                   h.vote(voters[1], poll, 0, 1, fee=2),
                   h.vote(voters[2], poll, 1, 1, fee=3)])
        tally = compute_tally(h.state(), b58encode(tx_id(poll)))
        assert tally.totals == (2, 1)
        assert tally.counts == (2, 1)
        assert tally.blank_votes == 0

    def test_weighted_negative_scores_spec_example(self):
        # weights 5,2,2; scores 1,3,-1; answers A,A,B -> A: 5+6=11, B: -2
        voters = [kp(f"w{i}") for i in range(3)]
        h = Harness(voters={voters[0]: 5, voters[1]: 2, voters[2]: 2})
        poll = h.poll(voters[0], score_min=-5, score_max=5,
                      weight_model=WeightModel.ACCOUNT_BALANCE, snapshot_height=0,
                      fee=1)
        h.produce([poll])
        # each vote costs stake 1 + fee 1 = 2, affordable even on balance 2;
        # weights come from the height-0 snapshot regardless
        h.produce([h.vote(voters[0], poll, 0, 1),
                   h.vote(voters[1], poll, 0, 3),
                   h.vote(voters[2], poll, 1, -1)])
        tally = compute_tally(h.state(), b58encode(tx_id(poll)))
        assert tally.totals == (11, -2)
        oracle = RecountOracle(h.genesis_doc).walk(h.chain.canonical_blocks())
        assert oracle.recount(b58encode(tx_id(poll))) == (tally.totals, tally.counts,
                                                          tally.blank_votes)

    def test_only_blank_votes(self):
        voters = [kp(f"b{i}") for i in range(3)]
        h = Harness(voters={v: 100 for v in voters})
        poll = h.poll(voters[0])
        h.produce([poll])
        h.produce([h.vote(v, poll, BLANK_ANSWER, 0, fee=i + 1)
                   for i, v in enumerate(voters)])
        tally = compute_tally(h.state(), b58encode(tx_id(poll)))
        assert tally.totals == (0, 0)
        assert tally.counted_votes == 0
        assert tally.blank_votes == 3

    def test_unknown_poll(self):
        h = Harness(voters={kp("x"): 10})
        with pytest.raises(UnknownPoll):
            compute_tally(h.state(), b58encode(hash256(b"ghost")))

    def test_extreme_magnitudes_fit_wide_accumulator(self):
        # weight near 2^63, |score| near 2^31: products need >64 bits
        state = ChainState()
        record = PollRecord(
            poll_id="P", creator="c", question=b"q", answers=(b"a", b"b"),
            score_min=-(2**31 - 1), score_max=2**31 - 1,
            weight_model=WeightModel.ACCOUNT_BALANCE, weight_asset_id=None,
            eligibility=MinBalance(threshold=0), snapshot_height=0,
            effective_snapshot_height=0, close_slot=10, created_height=1,
            vote_stake=1, poll_address="pa", answer_addresses=("a0", "a1"),
            weight_snapshot=(("v1", 2**63 - 1), ("v2", 2**63 - 1)))
        state.polls["P"] = record
        state.votes["P"] = {
            "v1": VoteRecord(tx_id="t1", answer_index=0, score=2**31 - 1),
            "v2": VoteRecord(tx_id="t2", answer_index=1, score=-(2**31 - 1)),
        }
        tally = compute_tally(state, "P")
        product = (2**63 - 1) * (2**31 - 1)
        assert tally.totals == (product, -product)
        assert product < 2**127  # fits signed 128-bit accumulation


class TestResultsView:
    def _closed(self, close_slot=3):
        v = kp("view")
        h = Harness(voters={v: 100})
        poll = h.poll(v, close_slot=close_slot)
        h.produce([poll])
        h.produce([h.vote(v, poll, 0, 1)])
        return h, b58encode(tx_id(poll))

    def test_locked_at_close_slot_exactly(self):
        h, pid = self._closed(close_slot=3)
        with pytest.raises(FairnessLocked) as exc:
            results_view(h.state(), pid, current_slot=3)
        assert exc.value.close_slot == 3

    def test_open_one_slot_later(self):
        h, pid = self._closed(close_slot=3)
        tally = results_view(h.state(), pid, current_slot=4)
        assert tally.totals == (1, 0)

    def test_unknown_poll(self):
        h, pid = self._closed()
        with pytest.raises(UnknownPoll):
            results_view(h.state(), "doesnotexist", current_slot=99)

    def test_frozen_tally_preferred_after_close_block(self):
        h, pid = self._closed(close_slot=3)
        h.produce([], slot=4)  # freezes results into state
        frozen = h.state().results[pid]
        assert results_view(h.state(), pid, current_slot=4) is frozen
        assert frozen.finalized_at_slot == 4


class TestRanking:
    def test_ties_break_by_answer_index(self):
        t = Tally(poll_id="P", totals=(5, 7, 5, -1), counts=(1, 1, 1, 1),
                  blank_votes=0)
        assert ranked_answers(t) == [1, 0, 2, 3]

    def test_negative_totals_rank_last(self):
        t = Tally(poll_id="P", totals=(-5, 0), counts=(1, 0), blank_votes=0)
        assert ranked_answers(t) == [1, 0]


class TestOracleEquivalence:
    @pytest.mark.parametrize("seed", range(6))
    def test_randomized_polls_match_recount(self, seed):
        rng = random.Random(seed)
        voters = [kp(f"rv{seed}:{i}") for i in range(6)]
        funds = {v: rng.randrange(10, 500) for v in voters}
        h = Harness(voters=funds,
                    assets=[{"name": "W",
                             "allocations": {str(v.address): rng.randrange(0, 50)
                                             for v in voters[:4]}}])
        model = rng.choice(list(WeightModel))
        weight_asset = genesis_asset_id("W") if model in (
            WeightModel.ASSET_BALANCE, WeightModel.CURRENCY_BALANCE) else None
        n_answers = rng.randrange(2, 6)
        poll = h.poll(voters[0], answers=tuple(f"a{i}".encode()
                                               for i in range(n_answers)),
                      score_min=-3, score_max=3, weight_model=model,
                      weight_asset_id=weight_asset, snapshot_height=0,
                      close_slot=50)
        h.produce([poll])
        votes = []
        for i, v in enumerate(voters):
            if rng.random() < 0.2:
                votes.append(h.vote(v, poll, BLANK_ANSWER, 0, fee=i + 1))
            else:
                votes.append(h.vote(v, poll, rng.randrange(n_answers),
                                    rng.randrange(-3, 4), fee=i + 1))
        h.produce(votes)
        pid = b58encode(tx_id(poll))
        tally = compute_tally(h.state(), pid)
        oracle = RecountOracle(h.genesis_doc).walk(h.chain.canonical_blocks())
        assert oracle.recount(pid) == (tally.totals, tally.counts, tally.blank_votes)
        assert oracle.conservation_holds()


def test_tally_json_shape():
    t = Tally(poll_id="P", totals=(3, -1), counts=(2, 1), blank_votes=1,
              finalized_at_slot=9)
    record = PollRecord(
        poll_id="P", creator="c", question=b"q", answers=(b"yes", b"no"),
        score_min=-1, score_max=1, weight_model=WeightModel.ACCOUNT,
        weight_asset_id=None, eligibility=MinBalance(threshold=0),
        snapshot_height=0, effective_snapshot_height=0, close_slot=8,
        created_height=1, vote_stake=1, poll_address="pa",
        answer_addresses=("a0", "a1"))
    doc = tally_json(t, record)
    assert doc["answers"][0] == {"index": 0, "label": "yes", "total": 3,
                                 "countedVotes": 2}
    assert doc["blankVotes"] == 1
    assert doc["countedVotes"] == 3
    assert doc["ranking"] == [0, 1]
