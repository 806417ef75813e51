"""Synthetic triplet cohorts with a plantable, time-decaying signal.

Features are log-normal. A case sample measured ``tau`` months before
diagnosis gets its ln CA125 raised, and the ln intensity of each informative
peak lowered, by ``signal_strength * max(0, 1 - tau / signal_horizon)``.
Every draw comes from ``rng.stream(seed, 0)`` in a fixed order, so a
config always produces the same cohort.
"""

from __future__ import annotations

from datetime import date, timedelta

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from triplet_aa.cohort import Cohort, Sample, Triplet
from triplet_aa.errors import validated
from triplet_aa.logging_config import get_logger
from triplet_aa.rng import stream

logger = get_logger(__name__)

DAYS_PER_MONTH = 365.25 / 12
COLLECTION_YEARS = 7
MAX_TIME_TO_DIAGNOSIS = 24.0

LOG_CA125_MEAN, LOG_CA125_SD = 2.5, 0.8
LOG_PEAK_MEAN, LOG_PEAK_SD = 1.0, 0.8
DEFAULT_INFORMATIVE_PEAKS = (2, 3, 7)


class SynthConfig(BaseModel):
    """Shape and signal of a synthetic cohort."""

    n_triplets: int = Field(179, ge=1)
    n_peaks: int = Field(67, ge=1)
    signal_strength: float = Field(2.0, ge=0)
    signal_horizon: float = Field(15.0, gt=0)
    informative_peaks: list[int] = Field(default_factory=lambda: list(DEFAULT_INFORMATIVE_PEAKS))
    patients_per_case: int = Field(1, ge=1)
    start_date: date = date(2001, 1, 1)
    seed: int = Field(0, ge=0)

    @field_validator("informative_peaks")
    @classmethod
    def _peaks_positive(cls, peaks: list[int]) -> list[int]:
        if any(p < 1 for p in peaks):
            raise ValueError("peak indices start at 1")
        return sorted(set(peaks))

    @model_validator(mode="after")
    def _peaks_in_range(self) -> SynthConfig:
        if any(p > self.n_peaks for p in self.informative_peaks):
            raise ValueError(f"informative peaks must be <= n_peaks ({self.n_peaks})")
        return self


def signal_shift(config: SynthConfig, time_to_diagnosis: float) -> float:
    return config.signal_strength * max(0.0, 1.0 - time_to_diagnosis / config.signal_horizon)


def generate(config: SynthConfig | None = None, **overrides) -> Cohort:
    """Build a cohort from ``config`` (or from keyword overrides of the defaults)."""
    config = config or validated(SynthConfig, **overrides)
    rng = stream(config.seed, 0)
    n_patients = -(-config.n_triplets // config.patients_per_case)
    span_days = COLLECTION_YEARS * 365
    min_offset = int(MAX_TIME_TO_DIAGNOSIS * DAYS_PER_MONTH)
    # Diagnosis dates leave room for every measurement to fall inside the span.
    diagnosis_offsets = rng.integers(min_offset, span_days, size=n_patients)
    informative = np.array(config.informative_peaks, dtype=int) - 1

    triplets = []
    for i in range(config.n_triplets):
        patient = i // config.patients_per_case
        tau = round(float(rng.uniform(0.0, MAX_TIME_TO_DIAGNOSIS)), 2)
        measured = config.start_date + timedelta(
            days=int(diagnosis_offsets[patient] - round(tau * DAYS_PER_MONTH))
        )
        case_position = int(rng.integers(1, 4))
        log_ca125 = rng.normal(LOG_CA125_MEAN, LOG_CA125_SD, size=3)
        log_peaks = rng.normal(LOG_PEAK_MEAN, LOG_PEAK_SD, size=(3, config.n_peaks))
        shift = signal_shift(config, tau)
        log_ca125[case_position - 1] += shift
        log_peaks[case_position - 1, informative] -= shift

        samples = []
        for position in range(1, 4):
            is_case = position == case_position
            control = "ab"[position - 1 - (position > case_position)] if not is_case else ""
            samples.append(
                Sample(
                    patient_id=f"P{patient + 1:04d}" if is_case else f"C{i + 1:04d}{control}",
                    ca125=float(np.exp(log_ca125[position - 1])),
                    peaks=tuple(float(x) for x in np.exp(log_peaks[position - 1])),
                    is_case=is_case,
                )
            )
        triplets.append(
            Triplet(
                triplet_id=f"T{i + 1:04d}",
                samples=tuple(samples),
                case_position=case_position,
                time_to_diagnosis=tau,
                measurement_date=measured,
            )
        )
    logger.info(
        f"Generated {len(triplets)} synthetic triplets "
        f"(signal {config.signal_strength}, horizon {config.signal_horizon}, seed {config.seed})"
    )
    return Cohort(tuple(triplets))
