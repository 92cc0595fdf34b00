"""Vote weighting, weighted tallies and the fairness gate over result visibility."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

from .tx import WeightModel

if TYPE_CHECKING:  # pragma: no cover
    from .chain import ChainState, PollRecord


class UnknownPoll(KeyError):
    pass


class FairnessLocked(Exception):
    """Results were requested before the poll's close slot has passed."""

    def __init__(self, close_slot: int):
        self.close_slot = close_slot
        super().__init__(f"results locked until slot {close_slot + 1}")


@dataclass(frozen=True)
class Tally:
    poll_id: str
    totals: tuple[int, ...]       # per answer: sum of weight * score
    counts: tuple[int, ...]       # per answer: non-blank votes counted
    blank_votes: int
    finalized_at_slot: int | None = None

    @property
    def counted_votes(self) -> int:
        return sum(self.counts)


def voter_weight(state: "ChainState", poll: "PollRecord", voter: str) -> int:
    """Tally weight of one voter under the poll's weight model.

    Balance-based models read the snapshot frozen at the poll's effective
    snapshot height, so transfers after the snapshot change nothing.
    """
    if poll.weight_model == WeightModel.ACCOUNT:
        return 1
    # ACCOUNT_BALANCE, ASSET_BALANCE and CURRENCY_BALANCE all read the
    # snapshot captured for the model's source asset at registration.
    return poll.weight_balance(voter)


def compute_tally(state: "ChainState", poll_id: str,
                  finalized_at_slot: int | None = None) -> Tally:
    """Per-answer sum of weight*score over canonical votes; blanks counted
    for turnout but excluded from every total."""
    poll = state.polls.get(poll_id)
    if poll is None:
        raise UnknownPoll(poll_id)
    totals = [0] * len(poll.answers)
    counts = [0] * len(poll.answers)
    blanks = 0
    for voter, vote in state.votes.get(poll_id, {}).items():
        if vote.blank:
            blanks += 1
            continue
        totals[vote.answer_index] += voter_weight(state, poll, voter) * vote.score
        counts[vote.answer_index] += 1
    return Tally(poll_id=poll_id, totals=tuple(totals), counts=tuple(counts),
                 blank_votes=blanks, finalized_at_slot=finalized_at_slot)


def results_view(state: "ChainState", poll_id: str, current_slot: int) -> Tally:
    """The fairness gate: totals exist for callers only after close_slot has
    strictly passed. Prefers the tally frozen at close, else recomputes."""
    poll = state.polls.get(poll_id)
    if poll is None:
        raise UnknownPoll(poll_id)
    if current_slot <= poll.close_slot:
        raise FairnessLocked(poll.close_slot)
    frozen = state.results.get(poll_id)
    if frozen is not None:
        return frozen
    return compute_tally(state, poll_id)


def ranked_answers(tally: Tally) -> list[int]:
    """Answer indices ordered by total descending, ties toward lower index."""
    return sorted(range(len(tally.totals)), key=lambda i: (-tally.totals[i], i))


def tally_json(tally: Tally, poll: "PollRecord") -> dict:
    return {
        "pollId": tally.poll_id,
        "answers": [
            {
                "index": i,
                "label": poll.answers[i].decode("utf-8", "replace"),
                "total": tally.totals[i],
                "countedVotes": tally.counts[i],
            }
            for i in range(len(tally.totals))
        ],
        "countedVotes": tally.counted_votes,
        "blankVotes": tally.blank_votes,
        "finalizedAtSlot": tally.finalized_at_slot,
        "ranking": ranked_answers(tally),
    }
