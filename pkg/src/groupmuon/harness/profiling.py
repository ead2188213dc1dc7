"""Rank-ratio and whitened-update norm-gap profilers.

profile_ranks normalizes numerical ranks by the corresponding row dimension,
so a value near 1 means near-full row rank. profile_norm_gap whitens one
momentum matrix both as a whole and block-wise under the same operator and
records the squared-Frobenius-norm gap, the non-ideal grouping cost signal.
Both are pure observers: they never mutate their inputs and consume no
random state, so enabling them cannot perturb a training trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from ..criterion import CriterionParams
from ..grouping import RowPartition, split_rows
from ..matcore import (
    FIXED_RELATIVE_RANK_POLICY,
    MACHINE_RANK_POLICY,
    NewtonSchulzConfig,
    RankPolicy,
    as_matrix,
    numerical_rank,
)
from ..optimizer import whiten

__all__ = ["RankProfile", "NormGapRecord", "profile_ranks", "profile_norm_gap"]


@dataclass(frozen=True)
class RankProfile:
    step: int
    parameter_id: str
    full_rank_ratio: float
    group_rank_ratios: List[float]
    sum_group_rank_over_full: float


@dataclass(frozen=True)
class NormGapRecord:
    step: int
    parameter_id: str
    full_update_sq_fro: float
    grouped_update_sq_fro: float
    gap: float


def profile_ranks(
    m: np.ndarray,
    partition: RowPartition,
    policy: RankPolicy = FIXED_RELATIVE_RANK_POLICY,
    step: int = 0,
    parameter_id: str = "",
) -> RankProfile:
    """Numerical ranks of m and its row blocks, normalized by row dimension."""
    m = as_matrix(m)
    full_rank = numerical_rank(m, policy)
    blocks = split_rows(m, partition)
    group_ranks = [numerical_rank(b, policy) for b in blocks]
    ratios = [r / b.shape[0] for r, b in zip(group_ranks, blocks)]
    total = sum(group_ranks)
    return RankProfile(
        step=step,
        parameter_id=parameter_id,
        full_rank_ratio=full_rank / m.shape[0],
        group_rank_ratios=ratios,
        sum_group_rank_over_full=(total / full_rank) if full_rank > 0 else 0.0,
    )


def profile_norm_gap(
    momentum: np.ndarray,
    partition: RowPartition,
    ns_config: NewtonSchulzConfig = NewtonSchulzConfig(),
    params: Optional[CriterionParams] = None,
    whitening: str = "newton_schulz",
    step: int = 0,
    parameter_id: str = "",
) -> NormGapRecord:
    """Squared Frobenius norms of the full vs block-wise whitened update.

    The exact-polar override uses params.rank_policy (when given) as the
    polar truncation tolerance, so the gap reproduces sum_i rank(M_i) - rank(M)
    on full-rank blocks.
    """
    momentum = as_matrix(momentum, "momentum")
    policy = params.rank_policy if params is not None else MACHINE_RANK_POLICY
    o_full = whiten(momentum, whitening, ns_config, policy)
    full_sq = float(np.sum(o_full * o_full))
    grouped_sq = 0.0
    for block in split_rows(momentum, partition):
        o_block = whiten(block, whitening, ns_config, policy)
        grouped_sq += float(np.sum(o_block * o_block))
    return NormGapRecord(
        step=step,
        parameter_id=parameter_id,
        full_update_sq_fro=full_sq,
        grouped_update_sq_fro=grouped_sq,
        gap=grouped_sq - full_sq,
    )
