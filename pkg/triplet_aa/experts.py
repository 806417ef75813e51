"""Log-linear CA125/peak combination experts and their prior weights.

An expert ``(v, w, p)`` scores every sample of a triplet by
``v ln C + w ln I_p`` and predicts the highest-scoring sample, splitting the
probability evenly over ties.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from triplet_aa.cohort import Cohort, Sample, Triplet
from triplet_aa.errors import ConfigurationError, DataError, InputError
from triplet_aa.game import Distribution
from triplet_aa.logging_config import get_logger

logger = get_logger(__name__)

# Peak weights are stored doubled so that +-1/2 stay integers.
DOUBLED_WEIGHTS = (-4, -2, -1, 0, 1, 2, 4)
# Without CA125 only the sign of w changes the ranking.
PEAK_ONLY_DOUBLED_WEIGHTS = (-2, 2)
SCORE_TIE_TOLERANCE = 1e-12


@dataclass(frozen=True, order=True)
class CombinationExpert:
    v: int
    w2: int
    peak: int = 0

    def __post_init__(self):
        if self.v not in (0, 1):
            raise ConfigurationError(f"v must be 0 or 1, got {self.v}.")
        if self.w2 not in DOUBLED_WEIGHTS:
            raise ConfigurationError(f"w must be one of -2, -1, -1/2, 0, 1/2, 1, 2; got {self.w2 / 2}.")
        if self.v == 0 and self.w2 == 0:
            raise ConfigurationError("The all-zero combination is not an expert.")
        if self.w2 == 0:
            object.__setattr__(self, "peak", 0)
        elif self.peak < 1:
            raise ConfigurationError(f"Peak index must be >= 1, got {self.peak}.")

    @classmethod
    def of(cls, v: int, w: float, peak: int = 0) -> CombinationExpert:
        doubled = 2 * Fraction(w)
        if doubled.denominator != 1:
            raise ConfigurationError(f"w must be a multiple of 1/2, got {w}.")
        return cls(int(v), int(doubled), int(peak))

    @property
    def w(self) -> float:
        return self.w2 / 2

    @property
    def is_ca125_only(self) -> bool:
        return self.w2 == 0

    @property
    def label(self) -> str:
        terms = ["ln C"] if self.v else []
        if self.w2:
            magnitude = Fraction(abs(self.w2), 2)
            coef = "" if magnitude == 1 else f"{magnitude} "
            sign = "-" if self.w2 < 0 else "+"
            if terms:
                terms.append(f"{sign} {coef}ln I_{self.peak}")
            else:
                terms.append(f"{'-' if self.w2 < 0 else ''}{coef}ln I_{self.peak}")
        return " ".join(terms)


CA125_EXPERT = CombinationExpert(1, 0)


def parse_expert(text: str) -> CombinationExpert:
    """Parse ``"v,w,p"`` (or ``"1,0"`` for CA125 alone)."""
    parts = [p.strip() for p in text.split(",")]
    try:
        if len(parts) == 2:
            v, w, peak = int(parts[0]), Fraction(parts[1]), 0
        elif len(parts) == 3:
            v, w, peak = int(parts[0]), Fraction(parts[1]), int(parts[2])
        else:
            raise ValueError(text)
    except ValueError as e:
        raise InputError(f"Cannot parse expert '{text}', expected 'v,w,p'.") from e
    return CombinationExpert.of(v, w, peak)


def build_pool(num_peaks: int) -> list[CombinationExpert]:
    """Every single-peak combination, peak by peak, then CA125 alone."""
    if num_peaks < 1:
        raise ConfigurationError(f"num_peaks must be >= 1, got {num_peaks}.")
    pool = []
    for peak in range(1, num_peaks + 1):
        pool.extend(CombinationExpert(1, w2, peak) for w2 in DOUBLED_WEIGHTS if w2)
        pool.extend(CombinationExpert(0, w2, peak) for w2 in PEAK_ONLY_DOUBLED_WEIGHTS)
    pool.append(CA125_EXPERT)
    return pool


def expert_score(expert: CombinationExpert, ca125: float, peak_intensity: float = 1.0) -> float:
    """v ln C + w ln I_p for one sample."""
    score = 0.0
    if expert.v:
        if not ca125 > 0:
            raise DataError(f"CA125 must be positive to take its log, got {ca125}")
        score += np.log(ca125)
    if expert.w2:
        if not peak_intensity > 0:
            raise DataError(
                f"Peak {expert.peak} intensity must be positive to take its log, got {peak_intensity}"
            )
        score += expert.w * np.log(peak_intensity)
    return float(score)


def _maximum_rule(scores: np.ndarray) -> np.ndarray:
    tied = scores >= scores.max(axis=-1, keepdims=True) - SCORE_TIE_TOLERANCE
    return tied / tied.sum(axis=-1, keepdims=True)


def _intensity(triplet: Triplet, sample: Sample, peak: int) -> float:
    if peak > len(sample.peaks):
        raise DataError(f"Missing feature peak_{peak:03d}", triplet_id=triplet.triplet_id)
    return sample.peaks[peak - 1]


def expert_predict(expert: CombinationExpert, triplet: Triplet) -> Distribution:
    """Maximum-rule prediction of one expert on one triplet."""
    scores = []
    for sample in triplet.samples:
        intensity = _intensity(triplet, sample, expert.peak) if expert.w2 else 1.0
        try:
            scores.append(expert_score(expert, sample.ca125, intensity))
        except DataError as e:
            raise e.with_context(triplet_id=triplet.triplet_id) from e
    return Distribution(_maximum_rule(np.array(scores)))


def prediction_tensor(pool: Sequence[CombinationExpert], triplets: Sequence[Triplet]) -> np.ndarray:
    """Predictions of every expert on every triplet, shape (T, K, 3)."""
    if not triplets:
        return np.zeros((0, len(pool), 3))
    ca125 = np.array([[s.ca125 for s in t.samples] for t in triplets])
    peaks = np.array([[s.peaks for s in t.samples] for t in triplets], dtype=float)
    if peaks.ndim != 3 or peaks.shape[2] == 0:
        if any(e.w2 for e in pool):
            raise DataError("Pool weighs peaks but the cohort has none")
        peaks = np.ones((len(triplets), 3, 1))
    if np.any(ca125 <= 0):
        bad = triplets[int(np.argwhere(ca125 <= 0)[0][0])]
        raise DataError("CA125 must be positive", triplet_id=bad.triplet_id)
    max_peak = max(e.peak for e in pool)
    if max_peak > peaks.shape[2]:
        raise DataError(
            f"Pool uses peak {max_peak} but the cohort has {peaks.shape[2]} peaks"
        )
    v = np.array([e.v for e in pool], dtype=float)
    w = np.array([e.w for e in pool])
    used = np.array([max(e.peak, 1) for e in pool]) - 1
    # Only peaks some expert weighs need to be positive.
    weighted = np.unique(used[w != 0])
    if weighted.size and np.any(peaks[:, :, weighted] <= 0):
        t_idx, _, p_idx = np.argwhere(peaks[:, :, weighted] <= 0)[0]
        raise DataError(
            f"Peak {weighted[p_idx] + 1} intensity must be positive; floor zeros first",
            triplet_id=triplets[t_idx].triplet_id,
        )
    log_c = np.log(ca125)  # (T, 3)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_i = np.log(peaks[:, :, used])  # (T, 3, K)
    log_i = np.where(w[None, None, :] == 0, 0.0, log_i)
    scores = v[None, :, None] * log_c[:, None, :] + w[None, :, None] * log_i.transpose(0, 2, 1)
    return _maximum_rule(scores)


def power_law_prior(pool: Sequence[CombinationExpert], d: float) -> np.ndarray:
    """Unnormalised prior weight d^-(p-1) per expert; CA125 alone gets 1."""
    if d < 1:
        raise ConfigurationError(f"Power-law base d must be >= 1, got {d}.")
    peaks = np.array([max(e.peak, 1) for e in pool], dtype=float)
    return np.power(float(d), -(peaks - 1))


def log_power_law_prior(pool: Sequence[CombinationExpert], d: float) -> np.ndarray:
    """ln of power_law_prior, exact for any d (no underflow)."""
    if d < 1:
        raise ConfigurationError(f"Power-law base d must be >= 1, got {d}.")
    peaks = np.array([max(e.peak, 1) for e in pool], dtype=float)
    return -(peaks - 1) * np.log(float(d))


def floor_intensities(cohort: Cohort) -> Cohort:
    """Replace zero peak intensities by half the smallest positive value of that peak."""
    if not len(cohort):
        return cohort
    peaks = np.array([[s.peaks for s in t.samples] for t in cohort.triplets])
    if np.any(peaks < 0):
        t_idx, _, p_idx = np.argwhere(peaks < 0)[0]
        raise DataError(
            f"Negative intensity in peak_{p_idx + 1:03d}",
            triplet_id=cohort.triplets[t_idx].triplet_id,
        )
    zeros = peaks == 0
    if not zeros.any():
        return cohort
    positive = np.where(peaks > 0, peaks, np.inf).min(axis=(0, 1))
    for p_idx in np.unique(np.argwhere(zeros)[:, 2]):
        if not np.isfinite(positive[p_idx]):
            raise DataError(f"peak_{p_idx + 1:03d} has no positive intensity in the cohort")
    floors = positive / 2.0
    logger.info(
        f"Flooring {int(zeros.sum())} zero intensities across "
        f"{int(zeros.any(axis=(0, 1)).sum())} peaks"
    )
    floored = np.where(zeros, floors[None, None, :], peaks)
    triplets = []
    for t, values in zip(cohort.triplets, floored):
        samples = tuple(
            dataclasses.replace(s, peaks=tuple(float(x) for x in row))
            for s, row in zip(t.samples, values)
        )
        triplets.append(dataclasses.replace(t, samples=samples))
    return Cohort(tuple(triplets))
