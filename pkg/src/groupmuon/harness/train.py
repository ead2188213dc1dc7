"""Training loop wiring the toy decoder to the Muon / adaptive optimizer split.

All 2-D projection matrices ride the whitened-momentum path; the embedding and
output head use the adaptive optimizer. Grouping applies to the attention
projections selected by the target preset:

  qk           group Wq and Wk; Wv stays on its full-matrix path
  v            group Wv; Wq and Wk stay full
  fixed-qk+v   Wq and Wk pinned to group size 6 with per-step random
               regrouping, while the configured (group_size, rule) applies to Wv

The muon_full baseline can optionally whiten the stacked [Wq; Wk; Wv] block as
one matrix (pack_qkv), mirroring a packed-projection implementation.

Everything is a pure function of the named seeds; profilers are observers and
never touch parameters or random state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import DivergedError, InvalidConfigurationError
from ..grouping import RULE_KINDS, GroupingRule, build_groups, heads_to_rows
from ..matcore import (
    FIXED_RELATIVE_RANK_POLICY,
    NewtonSchulzConfig,
    RankPolicy,
)
from ..optimizer import (
    WHITENING_BACKENDS,
    AdaptiveState,
    MuonState,
    adaptive_step,
    group_muon_step,
    muon_step_full,
)
from .model import TaskStream, TinyDecoder, ToyModelConfig
from .profiling import profile_norm_gap, profile_ranks
from .records import MetricsRecord

__all__ = ["OptimizerSettings", "train", "run_toy_training"]

OPTIMIZER_KINDS = ("muon_full", "muon_group")
GROUP_TARGETS = ("qk", "v", "fixed-qk+v")
FIXED_QK_GROUP_SIZE = 6
DIVERGENCE_FACTOR = 10.0


@dataclass(frozen=True)
class OptimizerSettings:
    kind: str = "muon_full"
    whitening: str = "newton_schulz"
    momentum_coeff: float = 0.95
    base_lr: float = 0.02
    lr_transfer: bool = False
    ns_iterations: int = 5
    target: str = "qk"
    group_size: int = 1
    rule: str = "adjacent"
    grouping_seed: int = 0
    resample_each_step: bool = False
    pack_qkv: bool = False
    adaptive_lr: float = 3e-3
    adaptive_beta1: float = 0.9
    adaptive_beta2: float = 0.95
    adaptive_weight_decay: float = 0.0
    nesterov: bool = False

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise InvalidConfigurationError(f"unknown optimizer kind {self.kind!r}")
        if self.whitening not in WHITENING_BACKENDS:
            raise InvalidConfigurationError(f"unknown whitening {self.whitening!r}")
        if self.target not in GROUP_TARGETS:
            raise InvalidConfigurationError(
                f"unknown grouping target {self.target!r}; expected one of {GROUP_TARGETS}"
            )
        if self.rule not in RULE_KINDS:
            raise InvalidConfigurationError(
                f"unknown grouping rule {self.rule!r}; expected one of {RULE_KINDS}"
            )
        if self.group_size < 1:
            raise InvalidConfigurationError("group_size must be >= 1")
        if self.pack_qkv and self.kind != "muon_full":
            raise InvalidConfigurationError("pack_qkv applies to muon_full only")
        if self.base_lr <= 0 or self.adaptive_lr <= 0:
            raise InvalidConfigurationError("learning rates must be positive")
        if self.ns_iterations < 1:
            raise InvalidConfigurationError("ns_iterations must be >= 1")

    def ns_config(self) -> NewtonSchulzConfig:
        return NewtonSchulzConfig(iterations=self.ns_iterations)

    def grouping_rule(self) -> GroupingRule:
        # resample_each_step is meaningful for the random rule only
        if self.rule == "random":
            return GroupingRule(
                "random", seed=self.grouping_seed,
                resample_each_step=self.resample_each_step,
            )
        return GroupingRule(self.rule)


@dataclass
class _MuonUnit:
    """One whitening unit: a single parameter or a stacked group of them."""

    names: Tuple[str, ...]
    state: MuonState
    grouped: bool

    def gather(self, values: Dict[str, np.ndarray]) -> np.ndarray:
        if len(self.names) == 1:
            return values[self.names[0]]
        return np.vstack([values[n] for n in self.names])

    def scatter(self, stacked: np.ndarray, params: Dict[str, np.ndarray]) -> None:
        offset = 0
        for n in self.names:
            rows = params[n].shape[0]
            params[n] = stacked[offset : offset + rows]
            offset += rows


def _muon_state(
    cfg: OptimizerSettings,
    shape: Tuple[int, int],
    grouping=None,
) -> MuonState:
    return MuonState(
        momentum=np.zeros(shape),
        momentum_coeff=cfg.momentum_coeff,
        base_lr=cfg.base_lr,
        ns_config=cfg.ns_config(),
        granularity="grouped" if grouping is not None else "full",
        grouping=grouping,
        lr_transfer_enabled=cfg.lr_transfer,
        whitening=cfg.whitening,
        nesterov=cfg.nesterov,
    )


def _build_muon_units(
    model: TinyDecoder, cfg: OptimizerSettings
) -> List[_MuonUnit]:
    mc = model.config
    h = mc.num_heads
    units: List[_MuonUnit] = []

    grouped_names: Dict[str, Tuple[int, GroupingRule]] = {}
    if cfg.kind == "muon_group":
        if mc.num_heads % cfg.group_size != 0:
            raise InvalidConfigurationError(
                f"group_size {cfg.group_size} does not divide num_heads {mc.num_heads}"
            )
        rule = cfg.grouping_rule()
        if cfg.target == "qk":
            grouped_names = {"attn.wq": (cfg.group_size, rule), "attn.wk": (cfg.group_size, rule)}
        elif cfg.target == "v":
            grouped_names = {"attn.wv": (cfg.group_size, rule)}
        else:  # fixed-qk+v: QK pinned to size-6 random regrouping, V swept
            if h % FIXED_QK_GROUP_SIZE != 0:
                raise InvalidConfigurationError(
                    f"fixed-qk+v needs num_heads divisible by {FIXED_QK_GROUP_SIZE}"
                )
            qk_rule = GroupingRule(
                "random", seed=cfg.grouping_seed, resample_each_step=True
            )
            grouped_names = {
                "attn.wq": (FIXED_QK_GROUP_SIZE, qk_rule),
                "attn.wk": (FIXED_QK_GROUP_SIZE, qk_rule),
                "attn.wv": (cfg.group_size, rule),
            }

    for i in range(mc.num_layers):
        prefix = f"layer{i}."
        if cfg.pack_qkv:
            names = tuple(prefix + s for s in ("attn.wq", "attn.wk", "attn.wv"))
            shape = (3 * mc.d_model, mc.d_model)
            units.append(_MuonUnit(names, _muon_state(cfg, shape), grouped=False))
        else:
            for suffix in ("attn.wq", "attn.wk", "attn.wv"):
                name = prefix + suffix
                shape = model.params[name].shape
                if suffix in grouped_names:
                    size, rule = grouped_names[suffix]
                    grouping = build_groups(h, size, rule, step=0)
                    units.append(
                        _MuonUnit((name,), _muon_state(cfg, shape, grouping), grouped=True)
                    )
                else:
                    units.append(_MuonUnit((name,), _muon_state(cfg, shape), grouped=False))
        for suffix in ("attn.wo", "mlp.w1", "mlp.w2"):
            name = prefix + suffix
            units.append(
                _MuonUnit((name,), _muon_state(cfg, model.params[name].shape), grouped=False)
            )
    return units


def run_toy_training(
    model_config: ToyModelConfig,
    optimizer_config: OptimizerSettings,
    steps: int,
    eval_every: int,
    batch_size: int = 16,
    data_seed: int = 0,
    profile_every: int = 0,
    profile_rank_policy: RankPolicy = FIXED_RELATIVE_RANK_POLICY,
) -> Tuple[List[MetricsRecord], TinyDecoder]:
    """Train the toy model; returns (metrics records, trained model).

    Deterministic given (init_seed, data_seed, grouping seed): two calls with
    identical configs produce byte-identical serialized record streams.
    Profilers observe the post-step momentum of Wq/Wk under the per-head
    partition and never affect the trajectory.
    """
    if steps < 1 or eval_every < 1:
        raise InvalidConfigurationError("steps and eval_every must be >= 1")
    model = TinyDecoder(model_config)
    task = TaskStream(model_config, data_seed, batch_size)
    muon_units = _build_muon_units(model, optimizer_config)
    adaptive_states = {
        name: AdaptiveState(
            first_moment=np.zeros_like(model.params[name]),
            second_moment=np.zeros_like(model.params[name]),
            beta1=optimizer_config.adaptive_beta1,
            beta2=optimizer_config.adaptive_beta2,
            weight_decay=optimizer_config.adaptive_weight_decay,
        )
        for name in model.adaptive_param_names()
    }
    head_partition = heads_to_rows(
        build_groups(model_config.num_heads, 1, GroupingRule("adjacent")),
        model_config.head_dim,
    )

    records: List[MetricsRecord] = []
    initial_loss: Optional[float] = None
    for step in range(steps):
        tokens, targets, mask = task.next_train_batch()
        loss, grads = model.loss_and_grads(tokens, targets, mask)
        if not np.isfinite(loss):
            raise DivergedError(step, loss)
        if initial_loss is None:
            initial_loss = loss
        elif loss > DIVERGENCE_FACTOR * initial_loss:
            raise DivergedError(step, loss)
        records.append(MetricsRecord(step=step, split="train", loss=loss))

        for unit in muon_units:
            w = unit.gather(model.params)
            g = unit.gather(grads)
            if unit.grouped:
                new_w = group_muon_step(w, g, unit.state, step=step)
            else:
                new_w = muon_step_full(w, g, unit.state)
            unit.scatter(new_w, model.params)
        for name, state in adaptive_states.items():
            model.params[name] = adaptive_step(
                model.params[name], grads[name], state, optimizer_config.adaptive_lr
            )

        if profile_every and step % profile_every == 0:
            records.extend(
                _profile_attention_momentum(
                    muon_units, model, head_partition, optimizer_config,
                    profile_rank_policy, step,
                )
            )
        if (step + 1) % eval_every == 0 or step == steps - 1:
            val_losses = [
                model.loss(t, y, m) for t, y, m in task.validation_batches()
            ]
            records.append(
                MetricsRecord(step=step, split="val", loss=float(np.mean(val_losses)))
            )
    return records, model


def _profile_attention_momentum(
    muon_units: Sequence[_MuonUnit],
    model: TinyDecoder,
    head_partition,
    cfg: OptimizerSettings,
    policy: RankPolicy,
    step: int,
) -> List[MetricsRecord]:
    out: List[MetricsRecord] = []
    for unit in muon_units:
        offset = 0
        for name in unit.names:
            rows = model.params[name].shape[0]
            if name.endswith(("attn.wq", "attn.wk")):
                momentum = unit.state.momentum[offset : offset + rows]
                rank = profile_ranks(momentum, head_partition, policy,
                                     step=step, parameter_id=name)
                gap = profile_norm_gap(momentum, head_partition, cfg.ns_config(),
                                       whitening=cfg.whitening,
                                       step=step, parameter_id=name)
                out.append(
                    MetricsRecord(
                        step=step,
                        split="profile",
                        parameter_id=name,
                        full_rank_ratio=rank.full_rank_ratio,
                        sum_group_rank_over_full=rank.sum_group_rank_over_full,
                        full_update_sq_fro=gap.full_update_sq_fro,
                        grouped_update_sq_fro=gap.grouped_update_sq_fro,
                        gap=gap.gap,
                    )
                )
            offset += rows
    return out


def train(
    model_config: ToyModelConfig,
    optimizer_config: OptimizerSettings,
    steps: int,
    eval_every: int,
    batch_size: int = 16,
    data_seed: int = 0,
    profile_every: int = 0,
    profile_rank_policy: RankPolicy = FIXED_RELATIVE_RANK_POLICY,
) -> List[MetricsRecord]:
    """Run a toy training job and return its metrics stream."""
    records, _ = run_toy_training(
        model_config,
        optimizer_config,
        steps,
        eval_every,
        batch_size=batch_size,
        data_seed=data_seed,
        profile_every=profile_every,
        profile_rank_policy=profile_rank_policy,
    )
    return records
