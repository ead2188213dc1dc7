"""Muon update family plus an adaptive optimizer for non-matrix-path parameters.

muon_step_full whitens the whole momentum buffer; group_muon_step whitens the
momentum rows of each head group independently and scatters the whitened
blocks back (head-wise updates are the group-size-1 case). The momentum buffer
is always updated as one full matrix before any grouping: the update
mu*M + G is element-wise, so this is identical to per-block updates and keeps
the buffer intact under per-step random regrouping.

The whitening backend is pluggable per state: "exact_polar" gives the
idealized update used by descent-bound verification, "newton_schulz" is the
practical training path.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidConfigurationError, InvalidInputError, NumericalFailureError
from .grouping import HeadGrouping, RowPartition, build_groups, heads_to_rows, transfer_lr
from .matcore import (
    MACHINE_RANK_POLICY,
    NewtonSchulzConfig,
    RankPolicy,
    as_matrix,
    exact_polar,
    newton_schulz,
)

__all__ = [
    "WHITENING_BACKENDS",
    "MuonState",
    "AdaptiveState",
    "whiten",
    "grouped_update",
    "muon_step_full",
    "group_muon_step",
    "adaptive_step",
]

WHITENING_BACKENDS = ("exact_polar", "newton_schulz")


def whiten(
    m: np.ndarray,
    backend: str,
    ns_config: NewtonSchulzConfig = NewtonSchulzConfig(),
    rank_policy: RankPolicy = MACHINE_RANK_POLICY,
) -> np.ndarray:
    """Dispatch to the configured whitening operator."""
    if backend == "exact_polar":
        return exact_polar(m, rank_policy)
    if backend == "newton_schulz":
        return newton_schulz(m, ns_config)
    raise InvalidConfigurationError(
        f"unknown whitening backend {backend!r}; expected one of {WHITENING_BACKENDS}"
    )


@dataclass
class MuonState:
    """Per-parameter Muon state; owned by exactly one parameter matrix."""

    momentum: np.ndarray
    momentum_coeff: float
    base_lr: float
    ns_config: NewtonSchulzConfig = field(default_factory=NewtonSchulzConfig)
    granularity: str = "full"
    grouping: Optional[HeadGrouping] = None
    lr_transfer_enabled: bool = False
    whitening: str = "newton_schulz"
    rank_policy: RankPolicy = MACHINE_RANK_POLICY
    nesterov: bool = False  # extension, off by default: whiten g + mu*M instead of M

    def __post_init__(self):
        self.momentum = as_matrix(self.momentum, "momentum")
        if not 0.0 <= self.momentum_coeff < 1.0:
            raise InvalidConfigurationError("momentum_coeff must be in [0, 1)")
        if self.base_lr <= 0:
            raise InvalidConfigurationError("base_lr must be positive")
        if self.granularity not in ("full", "grouped"):
            raise InvalidConfigurationError(
                f"granularity must be 'full' or 'grouped', got {self.granularity!r}"
            )
        if (self.grouping is None) == (self.granularity == "grouped"):
            raise InvalidConfigurationError(
                "grouping must be provided iff granularity is 'grouped'"
            )
        if self.whitening not in WHITENING_BACKENDS:
            raise InvalidConfigurationError(
                f"unknown whitening backend {self.whitening!r}"
            )


def _check_step_shapes(w: np.ndarray, g: np.ndarray, buf: np.ndarray) -> None:
    if w.shape != g.shape or w.shape != buf.shape:
        raise InvalidInputError(
            f"shape mismatch: w {w.shape}, g {g.shape}, momentum {buf.shape}"
        )


def grouped_update(
    src: np.ndarray,
    partition: RowPartition,
    backend: str,
    ns_config: NewtonSchulzConfig = NewtonSchulzConfig(),
    rank_policy: RankPolicy = MACHINE_RANK_POLICY,
) -> np.ndarray:
    """Whiten each row block of src independently and scatter the results back.

    Returns O with O[rows_i, :] = whiten(src[rows_i, :]) for every group i.
    This is the shared direction kernel for group_muon_step, the one-step
    descent verifier, and the update-norm profiler.
    """
    src = as_matrix(src, "src")
    if partition.num_rows != src.shape[0]:
        raise InvalidInputError(
            f"partition covers {partition.num_rows} rows, src has {src.shape[0]}"
        )
    out = np.empty_like(src)
    for gi, rows in enumerate(partition.groups):
        idx = list(rows)
        try:
            out[idx, :] = whiten(src[idx, :], backend, ns_config, rank_policy)
        except NumericalFailureError as exc:
            raise NumericalFailureError(
                f"whitening failed for row group {gi} (rows {rows}): {exc}"
            ) from exc
    return out


def muon_step_full(w: np.ndarray, g: np.ndarray, state: MuonState) -> np.ndarray:
    """One full-matrix Muon step: M <- mu*M + G, then w - lr * whiten(M)."""
    if state.granularity != "full":
        raise InvalidConfigurationError("muon_step_full requires granularity='full'")
    w = as_matrix(w, "w")
    g = as_matrix(g, "g")
    _check_step_shapes(w, g, state.momentum)
    state.momentum = state.momentum_coeff * state.momentum + g
    src = g + state.momentum_coeff * state.momentum if state.nesterov else state.momentum
    direction = whiten(src, state.whitening, state.ns_config, state.rank_policy)
    return w - state.base_lr * direction


def group_muon_step(
    w: np.ndarray, g: np.ndarray, state: MuonState, step: int = 0
) -> np.ndarray:
    """One group-wise Muon step.

    The head partition is rebuilt from (seed, step) when the rule resamples
    each step. Each group's momentum rows are concatenated in member-head
    order, whitened, and scattered back; the per-group learning rate is
    shape-transferred when enabled. Only rows of the stepped groups change,
    and a single all-heads group reproduces muon_step_full bit for bit.
    """
    if state.granularity != "grouped":
        raise InvalidConfigurationError("group_muon_step requires granularity='grouped'")
    w = as_matrix(w, "w")
    g = as_matrix(g, "g")
    _check_step_shapes(w, g, state.momentum)
    grouping = state.grouping
    if w.shape[0] % grouping.num_heads != 0:
        raise InvalidConfigurationError(
            f"{grouping.num_heads} heads do not divide {w.shape[0]} rows"
        )
    if grouping.rule.resample_each_step:
        grouping = build_groups(
            grouping.num_heads, grouping.group_size, grouping.rule, step
        )
    state.momentum = state.momentum_coeff * state.momentum + g
    src = g + state.momentum_coeff * state.momentum if state.nesterov else state.momentum

    head_dim = w.shape[0] // grouping.num_heads
    partition = heads_to_rows(grouping, head_dim)
    direction = grouped_update(
        src, partition, state.whitening, state.ns_config, state.rank_policy
    )
    if state.lr_transfer_enabled:
        # groups share one shape (equal head counts), so one transferred lr
        block_shape = (grouping.group_size * head_dim, w.shape[1])
        lr = transfer_lr(state.base_lr, w.shape, block_shape)
    else:
        lr = state.base_lr
    return w - lr * direction


@dataclass
class AdaptiveState:
    """Decoupled-weight-decay adaptive-moment state (embeddings / output head)."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    beta1: float = 0.9
    beta2: float = 0.95
    weight_decay: float = 0.0
    step_count: int = 0
    eps: float = 1e-8

    def __post_init__(self):
        self.first_moment = as_matrix(self.first_moment, "first_moment")
        self.second_moment = as_matrix(self.second_moment, "second_moment")
        if self.first_moment.shape != self.second_moment.shape:
            raise InvalidInputError("moment shapes disagree")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise InvalidConfigurationError("betas must be in [0, 1)")
        if self.weight_decay < 0:
            raise InvalidConfigurationError("weight_decay must be nonnegative")


def adaptive_step(
    w: np.ndarray, g: np.ndarray, state: AdaptiveState, lr: float
) -> np.ndarray:
    """Bias-corrected adaptive moment update with decoupled weight decay."""
    if lr <= 0:
        raise InvalidConfigurationError("lr must be positive")
    w = as_matrix(w, "w")
    g = as_matrix(g, "g")
    if w.shape != g.shape or w.shape != state.first_moment.shape:
        raise InvalidInputError(
            f"shape mismatch: w {w.shape}, g {g.shape}, moments {state.first_moment.shape}"
        )
    state.step_count += 1
    t = state.step_count
    state.first_moment = state.beta1 * state.first_moment + (1 - state.beta1) * g
    state.second_moment = state.beta2 * state.second_moment + (1 - state.beta2) * (g * g)
    m_hat = state.first_moment / (1 - state.beta1**t)
    v_hat = state.second_moment / (1 - state.beta2**t)
    return w * (1 - lr * state.weight_decay) - lr * m_hat / (np.sqrt(v_hat) + state.eps)
