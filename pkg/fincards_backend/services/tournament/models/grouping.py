import math
from typing import List, Sequence, TypeVar

import numpy as np

T = TypeVar("T")

STAGE3_MAX_GROUP = 25


def group_count(n: int, g: int) -> int:
    if g < 1:
        raise ValueError(f"group size must be >= 1, got {g}")
    return math.ceil(n / g) if n else 0


def round_robin_partition(candidates: Sequence[T], g: int) -> List[List[T]]:
    """
    Deal rank-ordered candidates into m = ceil(N/g) groups.

    Candidate at position j goes to group j mod m, so every group mixes
    high, mid and low Stage-1 ranks and sizes differ by at most one.
    """
    m = group_count(len(candidates), g)
    groups: List[List[T]] = [[] for _ in range(m)]
    for j, candidate in enumerate(candidates):
        groups[j % m].append(candidate)
    return groups


def fixed_partition(candidates: Sequence[T], g: int) -> List[List[T]]:
    """Contiguous slices of the rank order (grouping ablation)."""
    m = group_count(len(candidates), g)
    size = math.ceil(len(candidates) / m) if m else 0
    return [list(candidates[i:i + size]) for i in range(0, len(candidates), size)] if m else []


def stage3_group_size(m: int, min_size: int = 15, max_size: int = STAGE3_MAX_GROUP) -> int:
    """
    Stage-3 group size adapted to the candidate count M.

    M <= max_size gives one group of M; otherwise g = clamp(ceil(M / ceil(M / max_size)), min, max).
    """
    if m <= max_size:
        return m
    parts = math.ceil(m / max_size)
    return min(max(math.ceil(m / parts), min_size), max_size)


def contiguous_partition(items: Sequence[T], g: int) -> List[List[T]]:
    """Slices of size g; a trailing group smaller than 2 joins the previous one."""
    groups = [list(items[i:i + g]) for i in range(0, len(items), g)]
    if len(groups) > 1 and len(groups[-1]) < 2:
        tail = groups.pop()
        groups[-1].extend(tail)
    return groups


def seeded_shuffle(items: Sequence[T], seed: int) -> List[T]:
    order = np.random.default_rng(seed).permutation(len(items))
    return [items[i] for i in order]


def stage2_retry_seed(base_seed: int, attempt: int) -> int:
    """Seed of Stage-2 retry ``attempt`` (0-based): base_seed + 1000 * (attempt + 1)."""
    return base_seed + 1000 * (attempt + 1)


def stage3_round_seed(base_seed: int, round_number: int) -> int:
    return base_seed + round_number
