"""
Positional aggregation of per-group rankings across bootstrap rounds.

A round is a list of group rankings; a group ranking is the ordered list of
its chunk ids, rank 1 first.
"""

import math
from typing import Dict, Hashable, Iterable, List, Sequence

from fincards_backend.config.config import Aggregation

GroupRanking = Sequence[str]
Round = Sequence[GroupRanking]


def borda_score(rho: int, group_size: int) -> float:
    """Normalized Borda score (n - rho) / (n - 1) of rank rho in a group of n."""
    if group_size < 2:
        raise ValueError(f"borda_score needs group_size >= 2, got {group_size}")
    if not 1 <= rho <= group_size:
        raise ValueError(f"rank {rho} outside 1..{group_size}")
    return (group_size - rho) / (group_size - 1)


def normalized_position(rho: int, group_size: int) -> float:
    """(rho - 1) / (n - 1): 0 at the top of a group, 1 at the bottom."""
    return 1.0 - borda_score(rho, group_size)


def jaccard(a: Iterable[Hashable], b: Iterable[Hashable]) -> float:
    a, b = set(a), set(b)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def voting_cutoff(group_size: int) -> int:
    return math.ceil(group_size / 5)


def round_contributions(round_rankings: Round, mode: Aggregation) -> Dict[str, float]:
    """Per-item contribution of a single round under the given aggregation."""
    contributions: Dict[str, float] = {}
    for ranking in round_rankings:
        n = len(ranking)
        for rho, chunk_id in enumerate(ranking, start=1):
            if mode == Aggregation.BORDA:
                value = borda_score(rho, n)
            elif mode == Aggregation.MEAN_RANK:
                value = normalized_position(rho, n)
            elif mode == Aggregation.VOTING:
                value = 1.0 if rho <= voting_cutoff(n) else 0.0
            else:
                raise ValueError(f"unknown aggregation mode {mode!r}")
            contributions[chunk_id] = contributions.get(chunk_id, 0.0) + value
    return contributions


def aggregate_alternatives(rounds: Sequence[Round], mode: Aggregation) -> Dict[str, float]:
    """
    Aggregate rankings over rounds.

    Args:
        rounds: per-round group rankings
        mode: borda (sum of normalized Borda), mean_rank (mean normalized
            position, lower is better) or voting (count of top-ceil(g/5) finishes)

    Returns:
        Dict[str, float]: aggregate value per chunk id
    """
    mode = Aggregation(mode)
    totals: Dict[str, float] = {}
    appearances: Dict[str, int] = {}
    for round_rankings in rounds:
        for chunk_id, value in round_contributions(round_rankings, mode).items():
            totals[chunk_id] = totals.get(chunk_id, 0.0) + value
            appearances[chunk_id] = appearances.get(chunk_id, 0) + 1
    if mode == Aggregation.MEAN_RANK:
        return {chunk_id: totals[chunk_id] / appearances[chunk_id] for chunk_id in totals}
    return totals


def ordering_value(mode: Aggregation, value: float) -> float:
    """Map an aggregate to a higher-is-better value."""
    return -value if Aggregation(mode) == Aggregation.MEAN_RANK else value


def top_k(scores: Dict[str, float], mode: Aggregation, k: int, tiebreak: Dict[str, tuple]) -> List[str]:
    """Top-k ids by aggregate, ties broken by the given per-id sort key."""
    ordered = sorted(scores, key=lambda cid: (-ordering_value(mode, scores[cid]),) + tiebreak[cid])
    return ordered[:k]
