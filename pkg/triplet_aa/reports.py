"""CSV outputs and console summaries for the command-line front end."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import numpy as np
import polars as pl
from tabulate import tabulate

from triplet_aa.experts import CombinationExpert
from triplet_aa.logging_config import get_logger
from triplet_aa.stats import TABLE_COLUMNS, WindowRow

logger = get_logger(__name__)

ERROR_METHODS = {
    "ca125": "ca125_e",
    "aa": "aa_e",
    "min": "min_e",
    "c3_1": "c3_1_e",
    "c3_2": "c3_2_e",
    "c2": "c2_e",
    "c7_2": "c7_2_e",
}
PVALUE_METHODS = {
    "ca125": "ca125_p",
    "aa": "aa_p",
    "min": "min_p",
    "peak3": "peak3_p",
    "peak2": "peak2_p",
}
TABLE_SCHEMA = {c: pl.Float64 for c in TABLE_COLUMNS} | {"window_size": pl.Int64}


def _write(df: pl.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    df.write_csv(path)
    logger.info(f"Wrote {df.height} rows to {path}")
    return path


def table_frame(rows: Sequence[WindowRow]) -> pl.DataFrame:
    records = [{c: r.as_dict()[c] for c in TABLE_COLUMNS} for r in rows]
    return pl.DataFrame(records, schema=TABLE_SCHEMA)


def write_table(rows: Sequence[WindowRow], path: Path) -> Path:
    return _write(table_frame(rows), path)


def error_fraction_frame(rows: Sequence[WindowRow]) -> pl.DataFrame:
    records = []
    for row in rows:
        values = row.as_dict()
        for method, column in ERROR_METHODS.items():
            errors = values[column]
            fraction = errors / row.window_size if errors is not None and row.window_size else None
            records.append({"t": row.t, "method": method, "fraction": fraction})
    return pl.DataFrame(
        records, schema={"t": pl.Float64, "method": pl.Utf8, "fraction": pl.Float64}
    )


def write_error_fractions(rows: Sequence[WindowRow], path: Path) -> Path:
    return _write(error_fraction_frame(rows), path)


def pvalue_frame(rows: Sequence[WindowRow]) -> pl.DataFrame:
    records = []
    for row in rows:
        values = row.as_dict()
        for method, column in PVALUE_METHODS.items():
            p = values[column]
            records.append(
                {"t": row.t, "method": method, "log10_p": math.log10(p) if p is not None else None}
            )
    return pl.DataFrame(
        records, schema={"t": pl.Float64, "method": pl.Utf8, "log10_p": pl.Float64}
    )


def write_pvalues(rows: Sequence[WindowRow], path: Path) -> Path:
    return _write(pvalue_frame(rows), path)


def cumulative_frame(
    regret: np.ndarray, pool: Sequence[CombinationExpert], triplet_ids: Sequence[str]
) -> pl.DataFrame:
    """Per-step ``L_N^k - L_N`` with the aggregator's own (zero) column."""
    columns = {
        "step": np.arange(1, regret.shape[0] + 1),
        "triplet_id": list(triplet_ids),
        "aa": np.zeros(regret.shape[0]),
    }
    for k, expert in enumerate(pool):
        columns[expert.label] = regret[:, k]
    return pl.DataFrame(columns)


def write_cumulative(regret, pool, triplet_ids, path: Path) -> Path:
    return _write(cumulative_frame(regret, pool, triplet_ids), path)


def write_ranking(ranking: Sequence[tuple[CombinationExpert, float]], path: Path) -> Path:
    df = pl.DataFrame(
        {
            "rank": list(range(1, len(ranking) + 1)),
            "expert": [e.label for e, _ in ranking],
            "v": [e.v for e, _ in ranking],
            "w": [e.w for e, _ in ranking],
            "peak": [e.peak for e, _ in ranking],
            "loss": [loss for _, loss in ranking],
        }
    )
    return _write(df, path)


def format_table(rows: Sequence[WindowRow]) -> str:
    body = [[r.as_dict()[c] for c in TABLE_COLUMNS] for r in rows]
    return tabulate(body, headers=TABLE_COLUMNS, floatfmt="g", missingval="-")


def format_ranking(ranking: Sequence[tuple[CombinationExpert, float]], top: int = 10) -> str:
    body = [[i, e.label, loss] for i, (e, loss) in enumerate(ranking[:top], start=1)]
    return tabulate(body, headers=["rank", "expert", "loss"], floatfmt=".4f")
