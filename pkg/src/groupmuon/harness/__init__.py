"""Desk-scale experiment battery: analytic bound checks, a toy decoder model,
and the rank-ratio / norm-gap profilers."""

from .model import TaskStream, TinyDecoder, ToyModelConfig
from .profiling import NormGapRecord, RankProfile, profile_norm_gap, profile_ranks
from .quadratic import QuadraticProblem, verify_one_step
from .records import (
    CSV_FIELDS,
    MetricsRecord,
    records_to_csv,
    records_to_jsonl,
    write_records,
)
from .train import OptimizerSettings, run_toy_training, train

__all__ = [
    "QuadraticProblem",
    "verify_one_step",
    "ToyModelConfig",
    "TaskStream",
    "TinyDecoder",
    "RankProfile",
    "NormGapRecord",
    "profile_ranks",
    "profile_norm_gap",
    "MetricsRecord",
    "CSV_FIELDS",
    "records_to_csv",
    "records_to_jsonl",
    "write_records",
    "OptimizerSettings",
    "run_toy_training",
    "train",
]
