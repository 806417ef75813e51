"""Windowed error counts, the (d, eta) grid search and permutation p-values.

Permuting case labels never changes sample features, so every statistic is
computed from one ``(T, K, 3)`` table of expert losses per window; a trial
only draws new outcomes.
"""

from __future__ import annotations

import asyncio
import threading
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Callable, Sequence

import numpy as np
from cachetools import LRUCache, cached
from cachetools.keys import hashkey
from pydantic import BaseModel, Field, field_validator

from triplet_aa.aggregator import batch_run, batch_step, sharpen_rows
from triplet_aa.cohort import Cohort, order_chronological, select_window
from triplet_aa.errors import ConfigurationError, InputError
from triplet_aa.experts import (
    CA125_EXPERT,
    CombinationExpert,
    build_pool,
    log_power_law_prior,
    prediction_tensor,
)
from triplet_aa.game import loss_table
from triplet_aa.logging_config import get_logger
from triplet_aa.rng import stream

logger = get_logger(__name__)

# Half-losses can be fractional under ties; E <= E_0 is tested with this slack.
COMPARE_TOLERANCE = 1e-9

C3_1 = CombinationExpert.of(1, -1, 3)
C3_2 = CombinationExpert.of(1, -0.5, 3)
C2 = CombinationExpert.of(1, -1, 2)
C7_2 = CombinationExpert.of(1, -0.5, 7)

TABLE_COLUMNS = [
    "t",
    "window_size",
    "ca125_e",
    "ca125_p",
    "aa_e",
    "aa_p",
    "min_e",
    "min_p",
    "c3_1_e",
    "c3_2_e",
    "peak3_p",
    "c2_e",
    "peak2_p",
]


def _default_d() -> list[float]:
    return [round(1.0 + 0.1 * i, 10) for i in range(1, 11)]


def _default_eta() -> list[float]:
    return [round(0.1 + 0.05 * i, 10) for i in range(19)]


class GridSpec(BaseModel):
    """Values of d and eta searched by the grid statistic."""

    d_values: list[float] = Field(default_factory=_default_d, min_length=1)
    eta_values: list[float] = Field(default_factory=_default_eta, min_length=1)

    @field_validator("d_values")
    @classmethod
    def _check_d(cls, values: list[float]) -> list[float]:
        if any(not d >= 1 for d in values):
            raise ValueError("every d must be >= 1")
        return sorted(set(values))

    @field_validator("eta_values")
    @classmethod
    def _check_eta(cls, values: list[float]) -> list[float]:
        if any(not 0 < eta <= 1 for eta in values):
            raise ValueError("every eta must be in (0, 1]")
        return sorted(set(values))

    def cells(self) -> list[tuple[float, float]]:
        """(d, eta) pairs, d-major, both ascending."""
        return [(d, eta) for d in self.d_values for eta in self.eta_values]


class ErrMode(str, Enum):
    WINDOW = "window"
    PER_TRIPLET = "per-triplet"


class Method(str, Enum):
    CA125 = "ca125"
    AA = "aa"
    MIN = "min"
    PEAK3 = "peak3"
    PEAK2 = "peak2"


_METHOD_PEAKS = {Method.PEAK3: 3, Method.PEAK2: 2}


@dataclass(frozen=True)
class PValueReport:
    t: float | None
    window_size: int
    e0: float
    q: int
    n_trials: int
    p_value: float
    method: Method = Method.AA

    def __post_init__(self):
        if self.p_value != (self.q + 1) / (self.n_trials + 1):
            raise ValueError("p_value must equal (q + 1) / (n_trials + 1)")


@dataclass(frozen=True)
class WindowRow:
    t: float
    window_size: int
    ca125_e: float | None = None
    ca125_p: float | None = None
    aa_e: float | None = None
    aa_p: float | None = None
    min_e: float | None = None
    min_p: float | None = None
    c3_1_e: float | None = None
    c3_2_e: float | None = None
    peak3_p: float | None = None
    c2_e: float | None = None
    peak2_p: float | None = None
    # Not a table column; reported with the error fractions only.
    c7_2_e: float | None = None

    def as_dict(self) -> dict:
        return asdict(self)


class SweepConfig(BaseModel):
    """Parameters of a window sweep."""

    d: float = Field(1.2, ge=1)
    eta: float = Field(0.65, gt=0, le=1)
    grid: GridSpec = Field(default_factory=GridSpec)
    n_trials: int = Field(10_000, ge=0)
    seed: int = Field(0, ge=0)
    threads: int = Field(1, ge=1)
    closed_right: bool = False
    mode: ErrMode = ErrMode.WINDOW


def _window_key(window: Cohort, pool: Sequence[CombinationExpert]):
    features = tuple(
        (t.triplet_id, tuple((s.ca125, s.peaks) for s in t.samples)) for t in window
    )
    return hashkey(features, tuple(pool))


@cached(LRUCache(maxsize=64), key=_window_key, lock=threading.Lock())
def window_losses(window: Cohort, pool: Sequence[CombinationExpert]) -> np.ndarray:
    """Brier loss of every expert on every triplet for every outcome, (T, K, 3)."""
    losses = loss_table(prediction_tensor(pool, window.triplets))
    losses.setflags(write=False)
    return losses


def _chronological(window: Cohort) -> Cohort:
    if not len(window):
        raise InputError("The window contains no triplets.")
    return Cohort(tuple(order_chronological(window)))


def _aa_errors(losses, outcomes, prior_logs, etas, mode: ErrMode) -> np.ndarray:
    """Half-loss count of the categorical AA for each (prior, eta) row."""
    if mode is ErrMode.WINDOW:
        return batch_run(prior_logs, etas, losses, outcomes, categorical=True).sum(axis=0) / 2.0
    totals = np.zeros(len(etas))
    for step, outcome in enumerate(outcomes):
        predictions = sharpen_rows(batch_step(prior_logs, etas, losses[step]))
        totals += loss_table(predictions)[:, outcome]
    return totals / 2.0


def _expert_half_losses(losses: np.ndarray, outcomes: np.ndarray) -> np.ndarray:
    # (T, K): loss of each expert on the realised outcome of each triplet.
    return losses[np.arange(len(outcomes)), :, outcomes] / 2.0


def err_window(
    window: Cohort,
    d: float,
    eta: float,
    pool: Sequence[CombinationExpert],
    mode: ErrMode = ErrMode.WINDOW,
) -> float:
    """Errors of the categorical AA (power-law prior d, learning rate eta) on the window."""
    if not 0 < eta <= 1:
        raise ConfigurationError(f"Learning rate must be in (0, 1], got {eta}.")
    window = _chronological(window)
    losses = window_losses(window, pool)
    errors = _aa_errors(
        losses, window.outcomes, log_power_law_prior(pool, d)[None, :], np.array([eta]), mode
    )
    return float(errors[0])


def _grid_arrays(grid: GridSpec, pool: Sequence[CombinationExpert]):
    cells = grid.cells()
    priors = {d: log_power_law_prior(pool, d) for d in grid.d_values}
    prior_logs = np.array([priors[d] for d, _ in cells])
    etas = np.array([eta for _, eta in cells])
    return cells, prior_logs, etas


def _first_minimum(values: np.ndarray) -> int:
    return int(np.flatnonzero(values <= values.min() + COMPARE_TOLERANCE)[0])


def min_err_grid(
    window: Cohort,
    grid: GridSpec,
    pool: Sequence[CombinationExpert],
    mode: ErrMode = ErrMode.WINDOW,
) -> tuple[float, tuple[float, float]]:
    """Smallest AA error count over the grid, and the (d, eta) attaining it."""
    window = _chronological(window)
    cells, prior_logs, etas = _grid_arrays(grid, pool)
    errors = _aa_errors(window_losses(window, pool), window.outcomes, prior_logs, etas, mode)
    best = _first_minimum(errors)
    return float(errors[best]), cells[best]


def expert_errors(window: Cohort, pool: Sequence[CombinationExpert]) -> np.ndarray:
    """Half-loss count of every individual expert on the window, (K,)."""
    window = _chronological(window)
    return _expert_half_losses(window_losses(window, pool), window.outcomes).sum(axis=0)


def rank_experts(
    pool: Sequence[CombinationExpert], totals
) -> list[tuple[CombinationExpert, float]]:
    """Experts by ascending loss; ties go to the more frequent (lower) peak, then pool order."""
    order = sorted(range(len(pool)), key=lambda k: (totals[k], pool[k].peak, k))
    return [(pool[k], float(totals[k])) for k in order]


def _draw_positions(rng: np.random.Generator, size: int) -> np.ndarray:
    return rng.integers(0, 3, size=size)


def permute_labels(window: Cohort, rng: np.random.Generator) -> Cohort:
    """Move each triplet's case label to a uniformly drawn position."""
    positions = _draw_positions(rng, len(window))
    return Cohort(
        tuple(t.with_case_at(int(p) + 1) for t, p in zip(window.triplets, positions))
    )


def _method_experts(method: Method, pool: Sequence[CombinationExpert]) -> np.ndarray:
    if method is Method.MIN:
        return np.arange(len(pool))
    if method is Method.CA125:
        indices = [k for k, e in enumerate(pool) if e == CA125_EXPERT]
    else:
        peak = _METHOD_PEAKS[method]
        indices = [k for k, e in enumerate(pool) if e.v == 1 and e.w2 and e.peak == peak]
    if not indices:
        raise ConfigurationError(f"The expert pool has no experts for method '{method.value}'.")
    return np.array(indices)


def window_statistic(
    window: Cohort,
    grid: GridSpec,
    pool: Sequence[CombinationExpert],
    method: Method = Method.AA,
    mode: ErrMode = ErrMode.WINDOW,
) -> Callable[[np.ndarray], float]:
    """The test statistic of ``method`` as a function of the window's outcomes.

    ``window`` must already be in chronological order.
    """
    losses = window_losses(window, pool)
    if method is Method.AA:
        _, prior_logs, etas = _grid_arrays(grid, pool)

        def statistic(outcomes: np.ndarray) -> float:
            return float(_aa_errors(losses, outcomes, prior_logs, etas, mode).min())

        return statistic

    experts = _method_experts(method, pool)

    def statistic(outcomes: np.ndarray) -> float:
        return float(_expert_half_losses(losses, outcomes)[:, experts].sum(axis=0).min())

    return statistic


async def _gather_trials(trial: Callable[[int], float], n_trials: int, threads: int) -> list[float]:
    semaphore = asyncio.Semaphore(threads)

    async def run(j: int) -> float:
        async with semaphore:
            return await asyncio.to_thread(trial, j)

    tasks = [asyncio.create_task(run(j)) for j in range(1, n_trials + 1)]
    return await asyncio.gather(*tasks)


def _run_trials(trial: Callable[[int], float], n_trials: int, threads: int) -> list[float]:
    if threads <= 1:
        return [trial(j) for j in range(1, n_trials + 1)]
    return asyncio.run(_gather_trials(trial, n_trials, threads))


def pvalue(
    window: Cohort,
    grid: GridSpec,
    pool: Sequence[CombinationExpert],
    n_trials: int,
    seed: int,
    method: Method = Method.AA,
    threads: int = 1,
    mode: ErrMode = ErrMode.WINDOW,
    t: float | None = None,
) -> PValueReport:
    """Monte-Carlo permutation p-value (Q + 1) / (N + 1) of the window's statistic.

    Trial ``j`` draws its labels from ``rng.stream(seed, j)``, so the result
    does not depend on trial order or ``threads``.
    """
    if n_trials < 1:
        raise ConfigurationError(f"n_trials must be >= 1, got {n_trials}.")
    window = _chronological(window)
    statistic = window_statistic(window, grid, pool, method, mode)
    e0 = statistic(window.outcomes)

    def trial(j: int) -> float:
        return statistic(_draw_positions(stream(seed, j), len(window)))

    values = np.asarray(_run_trials(trial, n_trials, threads))
    q = int(np.count_nonzero(values <= e0 + COMPARE_TOLERANCE))
    report = PValueReport(
        t=t,
        window_size=len(window),
        e0=e0,
        q=q,
        n_trials=n_trials,
        p_value=(q + 1) / (n_trials + 1),
        method=method,
    )
    logger.debug(f"p-value {method.value} t={t}: E0={e0} Q={q}/{n_trials} p={report.p_value:.4g}")
    return report


def window_sweep(
    cohort: Cohort,
    t_values: Sequence[float],
    theta: float,
    config: SweepConfig | None = None,
    pool: Sequence[CombinationExpert] | None = None,
) -> list[WindowRow]:
    """One summary row per window start in ``t_values``."""
    config = config or SweepConfig()
    pool = pool if pool is not None else build_pool(cohort.num_peaks)
    index = {e: k for k, e in enumerate(pool)}
    rows = []
    for t in t_values:
        window = select_window(cohort, t, theta, config.closed_right)
        if not len(window):
            logger.warning(f"Window t={t} (theta={theta}) is empty")
            rows.append(WindowRow(t=float(t), window_size=0))
            continue
        errors = expert_errors(window, pool)

        def named(expert: CombinationExpert) -> float | None:
            return float(errors[index[expert]]) if expert in index else None

        p_values: dict[Method, float | None] = {m: None for m in Method}
        if config.n_trials:
            for method in Method:
                try:
                    p_values[method] = pvalue(
                        window,
                        config.grid,
                        pool,
                        config.n_trials,
                        config.seed,
                        method=method,
                        threads=config.threads,
                        mode=config.mode,
                        t=t,
                    ).p_value
                except ConfigurationError as e:
                    logger.warning(f"Skipping {method.value} p-value at t={t}: {e}")
        rows.append(
            WindowRow(
                t=float(t),
                window_size=len(window),
                ca125_e=named(CA125_EXPERT),
                ca125_p=p_values[Method.CA125],
                aa_e=err_window(window, config.d, config.eta, pool, config.mode),
                aa_p=p_values[Method.AA],
                min_e=float(errors.min()),
                min_p=p_values[Method.MIN],
                c3_1_e=named(C3_1),
                c3_2_e=named(C3_2),
                peak3_p=p_values[Method.PEAK3],
                c2_e=named(C2),
                peak2_p=p_values[Method.PEAK2],
                c7_2_e=named(C7_2),
            )
        )
        logger.info(f"Window t={t}: {len(window)} triplets, AA errors {rows[-1].aa_e:g}")
    return rows
