"""Quantile scoring of per-token sampling probabilities and difficulty ranking.

A response's probability sequence is summarized by a single order statistic
rather than a sum or mean: the quantile at level ``alpha`` (0 picks the
minimum, 1 the maximum). Low values signal high model uncertainty, so sorting
sub-tasks by ascending score yields a hardest-first difficulty order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

DEFAULT_ALPHA = 0.8


@dataclass(frozen=True)
class AlphaConfig:
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")


def alpha_quantile(probs: Sequence[float], alpha: float) -> float:
    """Quantile of the multiset via sorted order statistics with linear interpolation.

    The value at fractional rank (n - 1) * alpha is interpolated between the
    two neighboring order statistics, so the result is continuous in alpha.
    """
    if not probs:
        raise ValueError("alpha_quantile requires a nonempty probability sequence")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    ordered = sorted(probs)
    rank = (len(ordered) - 1) * alpha
    lo = math.floor(rank)
    hi = math.ceil(rank)
    if lo == hi:
        return float(ordered[lo])
    frac = rank - lo
    return float(ordered[lo] + (ordered[hi] - ordered[lo]) * frac)


def rank_by_difficulty(scores: Mapping[int, float]) -> list[int]:
    """Sub-task indices hardest first: ascending score, ties by ascending index."""
    if not scores:
        raise ValueError("rank_by_difficulty requires at least one score")
    return sorted(scores, key=lambda i: (scores[i], i))
