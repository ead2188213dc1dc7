"""Metrics rows and their CSV / line-delimited JSON serialization.

The column order and field names are fixed; golden tests pin them. Fields
that do not apply to a row are left empty in CSV and null in JSON. Rows are
step-indexed (no wall-clock fields) so identical runs serialize to identical
bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from ..errors import InvalidConfigurationError

__all__ = ["CSV_FIELDS", "MetricsRecord", "records_to_csv", "records_to_jsonl", "write_records"]

CSV_FIELDS = (
    "step",
    "split",
    "loss",
    "parameter_id",
    "full_rank_ratio",
    "sum_group_rank_over_full",
    "full_update_sq_fro",
    "grouped_update_sq_fro",
    "gap",
)


@dataclass(frozen=True)
class MetricsRecord:
    step: int
    split: str
    loss: Optional[float] = None
    parameter_id: Optional[str] = None
    full_rank_ratio: Optional[float] = None
    sum_group_rank_over_full: Optional[float] = None
    full_update_sq_fro: Optional[float] = None
    grouped_update_sq_fro: Optional[float] = None
    gap: Optional[float] = None

    def csv_row(self) -> str:
        cells = []
        for name in CSV_FIELDS:
            value = getattr(self, name)
            cells.append("" if value is None else _cell(value))
        return ",".join(cells)

    def json_line(self) -> str:
        return json.dumps({name: getattr(self, name) for name in CSV_FIELDS})


def _cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def records_to_csv(records: Iterable[MetricsRecord]) -> str:
    lines = [",".join(CSV_FIELDS)]
    lines.extend(r.csv_row() for r in records)
    return "\n".join(lines) + "\n"


def records_to_jsonl(records: Iterable[MetricsRecord]) -> str:
    return "\n".join(r.json_line() for r in records) + "\n"


def write_records(records, out_dir, basename: str, formats=("csv", "json")) -> list:
    """Write records in the requested formats; returns the paths written."""
    unknown = set(formats) - {"csv", "json"}
    if unknown:
        raise InvalidConfigurationError(
            f"unknown output formats {sorted(unknown)}; choose from csv, json"
        )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = list(records)
    written = []
    if "csv" in formats:
        path = out_dir / f"{basename}.csv"
        path.write_text(records_to_csv(records))
        written.append(path)
    if "json" in formats:
        path = out_dir / f"{basename}.jsonl"
        path.write_text(records_to_jsonl(records))
        written.append(path)
    return written
