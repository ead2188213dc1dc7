"""Analytic quadratic testbed for one-step descent bounds.

The loss (curvature/2) * ||W - target||_F^2 has gradient curvature * (W - target)
and satisfies the smoothness inequality with equality, so it is the sharpest
possible instance for checking the guaranteed one-step decrease of the
whitened update at full and grouped granularity.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

from ..criterion import CriterionParams, descent_bounds
from ..errors import InvalidConfigurationError, InvalidInputError
from ..grouping import RowPartition, full_partition
from ..matcore import as_matrix
from ..optimizer import MuonState, grouped_update, muon_step_full

__all__ = ["QuadraticProblem", "verify_one_step"]


@dataclass(frozen=True)
class QuadraticProblem:
    target: np.ndarray
    curvature: float

    def __post_init__(self):
        object.__setattr__(self, "target", as_matrix(self.target, "target"))
        if not self.curvature > 0:
            raise InvalidInputError("curvature must be positive")

    def loss(self, w: np.ndarray) -> float:
        d = np.asarray(w, dtype=np.float64) - self.target
        return 0.5 * self.curvature * float(np.sum(d * d))

    def gradient(self, w: np.ndarray) -> np.ndarray:
        return self.curvature * (np.asarray(w, dtype=np.float64) - self.target)


def verify_one_step(
    problem: QuadraticProblem,
    w0: np.ndarray,
    optimizer_config: MuonState,
    partition: Optional[RowPartition] = None,
) -> Tuple[float, float]:
    """Take one whitened step from w0 and return (realized decrease, bound).

    The bound is the full-matrix guarantee when partition is None and the
    grouped guarantee otherwise. The step starts from zero momentum so the
    whitened direction is the polar factor of the gradient itself, which is
    what the guarantee is stated for; exact polar whitening is required, and
    per-group lr transfer must be off because both bounds assume a single
    step size. The caller's state is never mutated.
    """
    if optimizer_config.whitening != "exact_polar":
        raise InvalidConfigurationError(
            "one-step verification requires whitening='exact_polar'"
        )
    if optimizer_config.lr_transfer_enabled:
        raise InvalidConfigurationError(
            "one-step verification requires lr_transfer_enabled=False"
        )
    w0 = as_matrix(w0, "w0")
    if w0.shape != problem.target.shape:
        raise InvalidInputError(
            f"w0 shape {w0.shape} does not match target {problem.target.shape}"
        )
    g = problem.gradient(w0)
    eta = optimizer_config.base_lr
    params = CriterionParams(
        beta=problem.curvature, eta=eta, rank_policy=optimizer_config.rank_policy
    )

    if partition is None:
        state = replace(
            optimizer_config,
            momentum=np.zeros_like(w0),
            granularity="full",
            grouping=None,
        )
        w1 = muon_step_full(w0, g, state)
        report = descent_bounds(g, full_partition(w0.shape[0]), params)
        bound = report.d_all
    else:
        direction = grouped_update(
            g, partition, "exact_polar", rank_policy=optimizer_config.rank_policy
        )
        w1 = w0 - eta * direction
        report = descent_bounds(g, partition, params)
        bound = report.d_grp

    realized = problem.loss(w0) - problem.loss(w1)
    return realized, bound
