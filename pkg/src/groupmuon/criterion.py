"""One-step descent bounds and the grouping gain-vs-cost criterion.

For a beta-smooth objective with gradient G and step size eta, whitening the
full matrix guarantees a one-step decrease of at least

    d_all = eta * ||G||_*  -  (beta * eta^2 / 2) * rank(G)

while whitening each row block G_i of a partition separately guarantees

    d_grp = eta * sum_i ||G_i||_*  -  (beta * eta^2 / 2) * sum_i rank(G_i).

Group-wise whitening therefore wins exactly when the whitening gain
sum_i ||G_i||_* - ||G||_* exceeds the grouping-induced norm cost
(beta*eta/2) * (sum_i rank(G_i) - rank(G)). With an approximate whitening
operator the rank terms are replaced by squared Frobenius norms of the actual
whitened updates; practical_norm_cost measures that non-ideal form.

The aligned low-rank construction (blocks a_i * u_i * v^T sharing one right
direction) gives closed forms for both sides and is the oracle for the
over-splitting regime: gain = sum|a_i| - sqrt(sum a_i^2), rank gap = k - 1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidConfigurationError, InvalidInputError
from .grouping import RowPartition, split_rows
from .matcore import (
    MACHINE_RANK_POLICY,
    RankPolicy,
    as_matrix,
    compact_svd,
    numerical_rank,
)

__all__ = [
    "CriterionParams",
    "CriterionReport",
    "AlignedInstance",
    "descent_bounds",
    "criterion_holds",
    "practical_norm_cost",
    "aligned_instance",
    "aligned_closed_form",
]


@dataclass(frozen=True)
class CriterionParams:
    beta: float
    eta: float
    rank_policy: RankPolicy = MACHINE_RANK_POLICY

    def __post_init__(self):
        if self.beta <= 0 or self.eta <= 0:
            raise InvalidInputError("beta and eta must be positive")


@dataclass(frozen=True)
class CriterionReport:
    """All terms of the gain-vs-cost comparison for one (gradient, partition) pair."""

    full_nuclear: float
    group_nuclears: List[float]
    full_rank: int
    group_ranks: List[int]
    gain: float
    ideal_cost: float
    d_all: float
    d_grp: float
    grouping_favored: bool
    practical_cost: Optional[float] = None

    def as_dict(self) -> dict:
        return {
            "full_nuclear": self.full_nuclear,
            "group_nuclears": list(self.group_nuclears),
            "full_rank": self.full_rank,
            "group_ranks": list(self.group_ranks),
            "gain": self.gain,
            "ideal_cost": self.ideal_cost,
            "practical_cost": self.practical_cost,
            "d_all": self.d_all,
            "d_grp": self.d_grp,
            "grouping_favored": self.grouping_favored,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict())


def descent_bounds(
    g: np.ndarray, partition: RowPartition, params: CriterionParams
) -> CriterionReport:
    """Evaluate both one-step bounds and the gain/cost decomposition for g."""
    g = as_matrix(g, "gradient")
    policy = params.rank_policy
    full_svd = compact_svd(g)
    full_nuclear = float(np.sum(full_svd.sigma))
    full_rank = _rank_from_sigma(full_svd.sigma, g.shape, policy)

    group_nuclears: List[float] = []
    group_ranks: List[int] = []
    for block in split_rows(g, partition):
        svd = compact_svd(block)
        group_nuclears.append(float(np.sum(svd.sigma)))
        group_ranks.append(_rank_from_sigma(svd.sigma, block.shape, policy))

    sum_nuclear = float(sum(group_nuclears))
    sum_rank = int(sum(group_ranks))
    beta, eta = params.beta, params.eta
    gain = sum_nuclear - full_nuclear
    ideal_cost = 0.5 * beta * eta * (sum_rank - full_rank)
    d_all = eta * full_nuclear - 0.5 * beta * eta * eta * full_rank
    d_grp = eta * sum_nuclear - 0.5 * beta * eta * eta * sum_rank
    return CriterionReport(
        full_nuclear=full_nuclear,
        group_nuclears=group_nuclears,
        full_rank=full_rank,
        group_ranks=group_ranks,
        gain=gain,
        ideal_cost=ideal_cost,
        d_all=d_all,
        d_grp=d_grp,
        grouping_favored=d_grp > d_all,
    )


def _rank_from_sigma(sigma: np.ndarray, shape, policy: RankPolicy) -> int:
    sigma_max = float(sigma[0]) if sigma.size else 0.0
    if sigma_max == 0.0:
        return 0
    return int(np.count_nonzero(sigma > policy.threshold(shape[0], shape[1], sigma_max)))


def criterion_holds(report: CriterionReport) -> bool:
    """Whether group-wise whitening has the strictly larger guaranteed decrease.

    Strict comparison: a tie reports False. This is the same comparison used to
    populate report.grouping_favored, so the two can never disagree.
    """
    return report.d_grp > report.d_all


def practical_norm_cost(
    o_full: np.ndarray, o_groups: Sequence[np.ndarray], params: CriterionParams
) -> float:
    """Grouping-induced norm cost of actual whitened updates.

    (beta*eta/2) * (sum_i ||O_i||_F^2 - ||O_full||_F^2), where the O_i are the
    per-group whitened updates as produced by the optimizer (Newton-Schulz
    included) and O_full is the full-matrix whitened update. The sign is
    reported, not clamped. Both accumulations walk the rows in the same chunk
    order, so passing the exact row blocks of o_full yields 0.0 exactly.
    """
    o_full = as_matrix(o_full, "o_full")
    if sum(b.shape[0] for b in o_groups) != o_full.shape[0] or any(
        b.shape[1] != o_full.shape[1] for b in o_groups
    ):
        raise InvalidInputError(
            "combined group shapes do not match o_full "
            f"{o_full.shape[0]}x{o_full.shape[1]}"
        )
    grouped_sq = 0.0
    full_sq = 0.0
    offset = 0
    for block in o_groups:
        block = as_matrix(block, "group update")
        rows = block.shape[0]
        grouped_sq += float(np.sum(block * block))
        chunk = o_full[offset : offset + rows]
        full_sq += float(np.sum(chunk * chunk))
        offset += rows
    return 0.5 * params.beta * params.eta * (grouped_sq - full_sq)


@dataclass(frozen=True)
class AlignedInstance:
    """k rank-one blocks a_i * u_i * v^T sharing the right direction v."""

    k: int
    strengths: Tuple[float, ...]
    block_rows: Tuple[int, ...]
    cols: int
    shared_right: np.ndarray = field(repr=False)
    left_vectors: Tuple[np.ndarray, ...] = field(repr=False)

    def __post_init__(self):
        if self.k < 1 or len(self.strengths) != self.k or len(self.block_rows) != self.k:
            raise InvalidConfigurationError("k, strengths, block_rows are inconsistent")
        if any(a == 0 for a in self.strengths):
            raise InvalidConfigurationError("strengths must be nonzero")
        if abs(np.linalg.norm(self.shared_right) - 1.0) > 1e-12:
            raise InvalidConfigurationError("shared_right must be a unit vector")
        for u in self.left_vectors:
            if abs(np.linalg.norm(u) - 1.0) > 1e-12:
                raise InvalidConfigurationError("left vectors must be unit vectors")

    def row_partition(self) -> RowPartition:
        """Contiguous partition matching the stacked block layout."""
        groups = []
        start = 0
        for m in self.block_rows:
            groups.append(tuple(range(start, start + m)))
            start += m
        return RowPartition(start, tuple(groups))


def aligned_instance(
    k: int,
    strengths: Sequence[float],
    block_rows: Sequence[int],
    cols: int,
    seed: int = 0,
) -> Tuple[AlignedInstance, np.ndarray]:
    """Sample an aligned low-rank instance and its stacked gradient matrix.

    The stacked matrix has rank one (every block shares the right direction),
    while each block has rank one on its own, so the rank gap is k - 1.
    """
    if k < 1 or cols < 1 or len(strengths) != k or len(block_rows) != k:
        raise InvalidConfigurationError(
            f"need k >= 1 with {k} strengths and block row counts, cols >= 1"
        )
    if any(m < 1 for m in block_rows):
        raise InvalidConfigurationError("block row counts must be positive")
    if any(a == 0 for a in strengths):
        raise InvalidConfigurationError("strengths must be nonzero")
    rng = np.random.default_rng(seed)
    v = _unit(rng.standard_normal(cols))
    us = tuple(_unit(rng.standard_normal(m)) for m in block_rows)
    inst = AlignedInstance(
        k=k,
        strengths=tuple(float(a) for a in strengths),
        block_rows=tuple(int(m) for m in block_rows),
        cols=cols,
        shared_right=v,
        left_vectors=us,
    )
    g = np.vstack([a * np.outer(u, v) for a, u in zip(inst.strengths, us)])
    return inst, g


def _unit(x: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x)
    if n == 0.0:
        x = np.zeros_like(x)
        x[0] = 1.0
        return x
    return x / n


def aligned_closed_form(k: int, strengths: Sequence[float]) -> Tuple[float, int]:
    """Closed-form (gain, rank gap) for an aligned instance.

    gain = sum_i |a_i| - sqrt(sum_i a_i^2); rank gap = k - 1. With equal
    strengths a this reduces to gain = a * (k - sqrt(k)).
    """
    if len(strengths) != k or any(a == 0 for a in strengths):
        raise InvalidConfigurationError("need k nonzero strengths")
    arr = np.asarray(strengths, dtype=np.float64)
    gain = float(np.sum(np.abs(arr)) - np.sqrt(np.sum(arr * arr)))
    return gain, k - 1
