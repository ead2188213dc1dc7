"""Group-wise Muon: whitened-momentum updates at full, head, and head-group
granularity, with an executable one-step criterion for when grouping wins.
"""

from .criterion import (
    AlignedInstance,
    CriterionParams,
    CriterionReport,
    aligned_closed_form,
    aligned_instance,
    criterion_holds,
    descent_bounds,
    practical_norm_cost,
)
from .errors import (
    ConfigFileError,
    DivergedError,
    GroupMuonError,
    InvalidConfigurationError,
    InvalidInputError,
    InvalidPartitionError,
    NumericalFailureError,
)
from .grouping import (
    GroupingRule,
    HeadGrouping,
    RowPartition,
    build_groups,
    full_partition,
    heads_to_rows,
    merge_rows,
    split_rows,
    transfer_lr,
)
from .matcore import (
    FIXED_RELATIVE_RANK_POLICY,
    MACHINE_RANK_POLICY,
    NewtonSchulzConfig,
    RankPolicy,
    SvdResult,
    compact_svd,
    exact_polar,
    frobenius_inner,
    newton_schulz,
    nuclear_norm,
    numerical_rank,
)
from .optimizer import (
    WHITENING_BACKENDS,
    AdaptiveState,
    MuonState,
    adaptive_step,
    group_muon_step,
    grouped_update,
    muon_step_full,
    whiten,
)

__version__ = "0.1.0"
