"""Triplet data model, CSV ingestion and time-window selection."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Iterator

import numpy as np
import polars as pl

from triplet_aa.errors import DataError, InputError
from triplet_aa.logging_config import get_logger

logger = get_logger(__name__)

BASE_COLUMNS = [
    "triplet_id",
    "patient_id",
    "is_case",
    "ca125",
    "time_to_diagnosis_months",
    "measurement_date",
]
SAMPLES_PER_TRIPLET = 3


def peak_column(peak: int) -> str:
    return f"peak_{peak:03d}"


@dataclass(frozen=True)
class Sample:
    patient_id: str
    ca125: float
    peaks: tuple[float, ...]
    is_case: bool = False


@dataclass(frozen=True)
class Triplet:
    triplet_id: str
    samples: tuple[Sample, Sample, Sample]
    case_position: int
    time_to_diagnosis: float
    measurement_date: date

    def __post_init__(self):
        if len(self.samples) != SAMPLES_PER_TRIPLET:
            raise DataError(
                f"A triplet needs exactly 3 samples, got {len(self.samples)}",
                triplet_id=self.triplet_id,
            )
        cases = [i + 1 for i, s in enumerate(self.samples) if s.is_case]
        if cases != [self.case_position]:
            raise DataError(
                f"Expected exactly one case at position {self.case_position}, found cases at {cases}",
                triplet_id=self.triplet_id,
            )
        if not self.time_to_diagnosis >= 0:
            raise DataError(
                f"time_to_diagnosis must be >= 0, got {self.time_to_diagnosis}",
                triplet_id=self.triplet_id,
            )

    @property
    def outcome(self) -> int:
        """0-based position of the case sample."""
        return self.case_position - 1

    @property
    def case_patient(self) -> str:
        return self.samples[self.outcome].patient_id

    def with_case_at(self, position: int) -> Triplet:
        """The same samples with the case label moved to ``position`` (1-based)."""
        samples = tuple(
            dataclasses.replace(s, is_case=(i + 1 == position))
            for i, s in enumerate(self.samples)
        )
        return dataclasses.replace(self, samples=samples, case_position=position)


@dataclass(frozen=True)
class Cohort:
    triplets: tuple[Triplet, ...] = ()

    def __len__(self) -> int:
        return len(self.triplets)

    def __iter__(self) -> Iterator[Triplet]:
        return iter(self.triplets)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(t.triplet_id for t in self.triplets)

    @property
    def outcomes(self) -> np.ndarray:
        return np.array([t.outcome for t in self.triplets], dtype=int)

    @property
    def num_peaks(self) -> int:
        return len(self.triplets[0].samples[0].peaks) if self.triplets else 0


def _parse_float(value: str | None, column: str, triplet_id: str, line: int) -> float:
    try:
        parsed = float(value)
    except (TypeError, ValueError):
        raise DataError(f"Column {column} is not a number: {value!r}", triplet_id=triplet_id, line=line)
    if not math.isfinite(parsed):
        raise DataError(f"Column {column} is not finite: {value!r}", triplet_id=triplet_id, line=line)
    return parsed


def _parse_triplet(rows: list[tuple[int, dict]], peak_columns: list[str]) -> Triplet:
    triplet_id = rows[0][1]["triplet_id"]
    first_line = rows[0][0]
    if len(rows) != SAMPLES_PER_TRIPLET:
        raise DataError(
            f"Expected 3 rows per triplet, got {len(rows)}", triplet_id=triplet_id, line=first_line
        )
    samples = []
    case_rows = []
    for position, (line, row) in enumerate(rows, start=1):
        flag = (row["is_case"] or "").strip()
        if flag not in ("0", "1"):
            raise DataError(f"is_case must be 0 or 1, got {flag!r}", triplet_id=triplet_id, line=line)
        ca125 = _parse_float(row["ca125"], "ca125", triplet_id, line)
        if ca125 <= 0:
            raise DataError(f"ca125 must be positive, got {ca125}", triplet_id=triplet_id, line=line)
        peaks = tuple(_parse_float(row[c], c, triplet_id, line) for c in peak_columns)
        negative = [c for c, value in zip(peak_columns, peaks) if value < 0]
        if negative:
            raise DataError(f"Negative intensity in {negative[0]}", triplet_id=triplet_id, line=line)
        patient_id = row["patient_id"] or ""
        if not patient_id.strip():
            raise DataError("Empty patient_id", triplet_id=triplet_id, line=line)
        if flag == "1":
            case_rows.append((position, line, row))
        samples.append(
            Sample(
                patient_id=patient_id,
                ca125=ca125,
                peaks=peaks,
                is_case=flag == "1",
            )
        )
    if len(case_rows) != 1:
        raise DataError(
            f"Expected exactly one case sample, found {len(case_rows)}",
            triplet_id=triplet_id,
            line=first_line,
        )
    position, line, case_row = case_rows[0]
    time_to_diagnosis = _parse_float(
        case_row["time_to_diagnosis_months"], "time_to_diagnosis_months", triplet_id, line
    )
    try:
        measured = date.fromisoformat((case_row["measurement_date"] or "").strip())
    except ValueError:
        raise DataError(
            f"measurement_date is not an ISO date: {case_row['measurement_date']!r}",
            triplet_id=triplet_id,
            line=line,
        )
    return Triplet(
        triplet_id=triplet_id,
        samples=tuple(samples),
        case_position=position,
        time_to_diagnosis=time_to_diagnosis,
        measurement_date=measured,
    )


def load_cohort(path: str | Path, num_peaks: int | None = None) -> Cohort:
    """Read a cohort CSV (one row per sample, contiguous rows per triplet)."""
    path = Path(path)
    if not path.is_file():
        raise DataError("Cohort file not found", path=str(path))
    try:
        df = pl.read_csv(path, infer_schema=False)
    except (pl.exceptions.PolarsError, UnicodeDecodeError) as e:
        raise DataError(f"Malformed CSV: {e}", path=str(path))

    missing = [c for c in BASE_COLUMNS if c not in df.columns]
    if missing:
        raise DataError(f"Missing column(s): {', '.join(missing)}", path=str(path))
    peak_columns = sorted(c for c in df.columns if c.startswith("peak_"))
    expected = [peak_column(p) for p in range(1, len(peak_columns) + 1)]
    if peak_columns != expected:
        raise DataError(f"Peak columns must run peak_001..peak_{len(peak_columns):03d}", path=str(path))
    if num_peaks is not None and len(peak_columns) != num_peaks:
        raise DataError(f"Expected {num_peaks} peak columns, found {len(peak_columns)}", path=str(path))

    groups: list[list[tuple[int, dict]]] = []
    seen: set[str] = set()
    # Line 1 is the header.
    for line, row in enumerate(df.iter_rows(named=True), start=2):
        triplet_id = row["triplet_id"]
        if not triplet_id:
            raise DataError("Empty triplet_id", line=line, path=str(path))
        if groups and groups[-1][0][1]["triplet_id"] == triplet_id:
            groups[-1].append((line, row))
            continue
        if triplet_id in seen:
            raise DataError("Rows of a triplet must be contiguous", triplet_id=triplet_id, line=line, path=str(path))
        seen.add(triplet_id)
        groups.append([(line, row)])

    try:
        triplets = tuple(_parse_triplet(rows, peak_columns) for rows in groups)
    except DataError as e:
        raise e.with_context(path=str(path)) from e
    if not triplets:
        raise DataError("Cohort file has no triplets", path=str(path))
    logger.info(f"Loaded {len(triplets)} triplets with {len(peak_columns)} peaks from {path}")
    return Cohort(triplets)


def write_cohort(cohort: Cohort, path: str | Path) -> Path:
    """Write ``cohort`` in the CSV schema read by load_cohort."""
    path = Path(path)
    num_peaks = cohort.num_peaks
    columns = BASE_COLUMNS + [peak_column(p) for p in range(1, num_peaks + 1)]
    records = []
    for t in cohort.triplets:
        for s in t.samples:
            records.append(
                [
                    t.triplet_id,
                    s.patient_id,
                    "1" if s.is_case else "0",
                    repr(float(s.ca125)),
                    repr(float(t.time_to_diagnosis)),
                    t.measurement_date.isoformat(),
                    *(repr(float(x)) for x in s.peaks),
                ]
            )
    df = pl.DataFrame(records, schema={c: pl.Utf8 for c in columns}, orient="row")
    path.parent.mkdir(parents=True, exist_ok=True)
    df.write_csv(path)
    logger.info(f"Wrote {len(cohort)} triplets to {path}")
    return path


def order_chronological(cohort: Cohort) -> list[Triplet]:
    """Triplets by case measurement date, then by id."""
    return sorted(cohort.triplets, key=lambda t: (t.measurement_date, t.triplet_id))


def select_window(
    cohort: Cohort, t: float, theta: float, closed_right: bool = False
) -> Cohort:
    """Triplets with time-to-diagnosis in [t, t + theta), latest per case patient.

    The result is in chronological order.
    """
    if not theta > 0:
        raise InputError(f"Window length must be positive, got {theta}.")
    end = t + theta
    latest: dict[str, Triplet] = {}
    for triplet in cohort.triplets:
        tau = triplet.time_to_diagnosis
        inside = t <= tau <= end if closed_right else t <= tau < end
        if not inside:
            continue
        current = latest.get(triplet.case_patient)
        key = (triplet.measurement_date, triplet.triplet_id)
        if current is None or key > (current.measurement_date, current.triplet_id):
            latest[triplet.case_patient] = triplet
    return Cohort(tuple(order_chronological(Cohort(tuple(latest.values())))))
