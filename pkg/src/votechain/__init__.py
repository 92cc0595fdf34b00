"""Permissioned proof-of-stake blockchain voting platform.

Polls, voting-token movements and votes are ledger transactions; weighted
tallies are derived state behind a fairness gate.
"""

__version__ = "0.1.0"
