"""Head partitions, row-block split/merge, and learning-rate transfer.

Heads are grouped under one of three rules:

  adjacent  consecutive heads: {0..g-1}, {g..2g-1}, ...
  interval  stride-separated heads: group j is {j, j+K, ..., j+(g-1)K}, K = H/g
  random    a seeded uniform permutation chunked into size-g runs, optionally
            resampled every optimizer step

A HeadGrouping expands to a RowPartition of a stacked projection matrix by
mapping head h to rows [h*head_dim, (h+1)*head_dim). Rows within a group
follow member-head order, which makes split/merge self-inverse and matches
how grouped blocks are concatenated before whitening.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidConfigurationError, InvalidPartitionError

__all__ = [
    "GroupingRule",
    "HeadGrouping",
    "RowPartition",
    "build_groups",
    "heads_to_rows",
    "full_partition",
    "split_rows",
    "merge_rows",
    "transfer_lr",
]

RULE_KINDS = ("adjacent", "interval", "random")


@dataclass(frozen=True)
class GroupingRule:
    kind: str
    seed: Optional[int] = None
    resample_each_step: bool = False

    def __post_init__(self):
        if self.kind not in RULE_KINDS:
            raise InvalidConfigurationError(
                f"unknown grouping rule {self.kind!r}; expected one of {RULE_KINDS}"
            )
        if self.kind == "random" and self.seed is None:
            raise InvalidConfigurationError("random grouping requires a seed")
        if self.kind != "random" and self.seed is not None:
            raise InvalidConfigurationError(f"{self.kind} grouping takes no seed")
        if self.kind != "random" and self.resample_each_step:
            raise InvalidConfigurationError(
                f"resample_each_step applies to random grouping only, not {self.kind}"
            )


@dataclass(frozen=True)
class HeadGrouping:
    """A partition of num_heads heads into num_heads/group_size groups."""

    num_heads: int
    group_size: int
    rule: GroupingRule
    groups: tuple = field(default=())

    def __post_init__(self):
        h, g = self.num_heads, self.group_size
        if h < 1 or g < 1:
            raise InvalidConfigurationError("num_heads and group_size must be positive")
        if h % g != 0:
            raise InvalidConfigurationError(
                f"group_size {g} does not divide num_heads {h}"
            )
        if len(self.groups) != h // g:
            raise InvalidConfigurationError(
                f"expected {h // g} groups, got {len(self.groups)}"
            )
        seen = [idx for grp in self.groups for idx in grp]
        if any(len(grp) != g for grp in self.groups) or sorted(seen) != list(range(h)):
            raise InvalidConfigurationError(
                "groups must form an exact partition of head indices"
            )


@dataclass(frozen=True)
class RowPartition:
    """Row-index lists forming an exact partition of {0..num_rows-1}.

    Groups may be non-contiguous; within a group, rows keep the order in which
    they were claimed (member-head order for head-derived partitions).
    """

    num_rows: int
    groups: tuple

    def __post_init__(self):
        seen = [r for grp in self.groups for r in grp]
        if sorted(seen) != list(range(self.num_rows)):
            raise InvalidPartitionError(
                f"groups do not partition {self.num_rows} rows exactly"
            )


def build_groups(
    num_heads: int, group_size: int, rule: GroupingRule, step: int = 0
) -> HeadGrouping:
    """Construct the head partition for one optimizer step.

    Adjacent and interval partitions depend only on (num_heads, group_size).
    Random partitions are a pure function of (seed, step) when
    resample_each_step is set, and of seed alone otherwise.
    """
    h, g = num_heads, group_size
    if h < 1 or g < 1 or h % g != 0:
        raise InvalidConfigurationError(
            f"group_size {g} does not divide num_heads {h}"
        )
    n_groups = h // g
    if rule.kind == "adjacent":
        groups = tuple(tuple(range(j * g, (j + 1) * g)) for j in range(n_groups))
    elif rule.kind == "interval":
        stride = n_groups
        groups = tuple(
            tuple(j + t * stride for t in range(g)) for j in range(n_groups)
        )
    else:
        entropy = [rule.seed, step] if rule.resample_each_step else [rule.seed]
        rng = np.random.default_rng(np.random.SeedSequence(entropy))
        perm = rng.permutation(h)
        groups = tuple(
            tuple(int(x) for x in perm[j * g : (j + 1) * g]) for j in range(n_groups)
        )
    return HeadGrouping(num_heads=h, group_size=g, rule=rule, groups=groups)


def heads_to_rows(grouping: HeadGrouping, head_dim: int) -> RowPartition:
    """Expand head groups to row groups of a stacked (num_heads*head_dim)-row matrix."""
    if head_dim < 1:
        raise InvalidConfigurationError("head_dim must be positive")
    groups = tuple(
        tuple(r for h in grp for r in range(h * head_dim, (h + 1) * head_dim))
        for grp in grouping.groups
    )
    return RowPartition(num_rows=grouping.num_heads * head_dim, groups=groups)


def full_partition(num_rows: int) -> RowPartition:
    """The degenerate single-group partition covering every row in order."""
    return RowPartition(num_rows=num_rows, groups=(tuple(range(num_rows)),))


def split_rows(m: np.ndarray, partition: RowPartition) -> list:
    """Extract the row blocks of m claimed by each partition group."""
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != partition.num_rows:
        raise InvalidPartitionError(
            f"partition covers {partition.num_rows} rows but matrix has shape {m.shape}"
        )
    return [m[list(grp), :] for grp in partition.groups]


def merge_rows(blocks: Sequence[np.ndarray], partition: RowPartition) -> np.ndarray:
    """Inverse of split_rows: scatter each block's rows back to their claimed indices."""
    if len(blocks) != len(partition.groups):
        raise InvalidPartitionError(
            f"got {len(blocks)} blocks for {len(partition.groups)} groups"
        )
    cols = {b.shape[1] for b in blocks}
    if len(cols) != 1:
        raise InvalidPartitionError(f"blocks disagree on column count: {sorted(cols)}")
    out = np.empty((partition.num_rows, cols.pop()), dtype=np.float64)
    for block, grp in zip(blocks, partition.groups):
        if block.shape[0] != len(grp):
            raise InvalidPartitionError(
                f"block with {block.shape[0]} rows does not match group of size {len(grp)}"
            )
        out[list(grp), :] = block
    return out


def transfer_lr(base_lr: float, full_shape, group_shape) -> float:
    """Shape-aware learning-rate transfer from the full matrix to a group block.

    lr_group = base_lr * sqrt(max(group dims) / max(full dims)), keeping the
    update scale comparable when whitening operates on a differently shaped
    block. Identical shapes transfer to base_lr unchanged.
    """
    if min(full_shape) < 1 or min(group_shape) < 1 or base_lr <= 0:
        raise InvalidConfigurationError("shapes and base_lr must be positive")
    return base_lr * math.sqrt(max(group_shape) / max(full_shape))
