"""Strong Aggregating Algorithm for the Brier game.

Weights are kept as normalised log-weights (``logsumexp(log_weights) == 0``).
Predictions are invariant to a common rescaling of the weights, so this is
the algorithm's state up to that rescaling, and it cannot underflow however
long the run.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from triplet_aa.errors import ConfigurationError, InputError, NumericError
from triplet_aa.game import TRIPLET, Distribution, OutcomeSpace, brier_loss, loss_table
from triplet_aa.logging_config import get_logger

logger = get_logger(__name__)

# Probabilities within this distance of the maximum are treated as tied.
TIE_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class AggregatorState:
    log_weights: np.ndarray
    eta: float
    space: OutcomeSpace = TRIPLET

    def __post_init__(self):
        log_weights = np.array(self.log_weights, dtype=float)
        if log_weights.ndim != 1 or log_weights.size == 0:
            raise ConfigurationError("The aggregator needs at least one expert.")
        if not np.all(np.isfinite(log_weights)):
            raise NumericError("Expert weights must be finite and positive.")
        if not 0 < self.eta <= 1:
            raise ConfigurationError(f"Learning rate must be in (0, 1], got {self.eta}.")
        log_weights -= logsumexp(log_weights)
        log_weights.setflags(write=False)
        object.__setattr__(self, "log_weights", log_weights)

    @classmethod
    def initial(
        cls, prior, eta: float, space: OutcomeSpace = TRIPLET
    ) -> AggregatorState:
        """State before the first step, from positive (unnormalised) prior weights."""
        prior = np.asarray(prior, dtype=float)
        if prior.ndim != 1 or prior.size == 0:
            raise ConfigurationError("The prior needs at least one expert.")
        if not np.all(np.isfinite(prior)) or np.any(prior <= 0):
            raise ConfigurationError("Prior weights must be finite and positive.")
        return cls(np.log(prior), eta, space)

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def num_experts(self) -> int:
        return self.log_weights.size


@dataclass(frozen=True, eq=False)
class StepRecord:
    prediction: Distribution
    outcome: int
    learner_loss: float
    expert_losses: np.ndarray


def _prediction_matrix(state: AggregatorState, expert_preds) -> np.ndarray:
    if isinstance(expert_preds, np.ndarray):
        matrix = np.asarray(expert_preds, dtype=float)
    else:
        matrix = np.array([np.asarray(p, dtype=float) for p in expert_preds])
    if matrix.ndim != 2 or matrix.shape[0] == 0:
        raise ConfigurationError("Expected a non-empty list of expert predictions.")
    if matrix.shape[0] != state.num_experts:
        raise ConfigurationError(
            f"Got {matrix.shape[0]} expert predictions for {state.num_experts} weights."
        )
    if matrix.shape[1] != state.space.size:
        raise InputError(
            f"Expert predictions have {matrix.shape[1]} outcomes, expected {state.space.size}."
        )
    return matrix


def _generalized(log_weights: np.ndarray, etas: np.ndarray, losses: np.ndarray) -> np.ndarray:
    # log_weights (C, K), etas (C,), losses (K, n) -> G (C, n)
    exponents = log_weights[:, :, None] - etas[:, None, None] * losses[None, :, :]
    return -logsumexp(exponents, axis=1) / etas[:, None]


def substitute_batch(G) -> tuple[np.ndarray, np.ndarray]:
    """Water-filling solve of ``sum((s - G)^+) = 2`` for each row of ``G``.

    Returns the predictions ``(s - G)^+ / 2`` with shape ``(C, n)`` and the
    solutions ``s`` with shape ``(C,)``.
    """
    G = np.atleast_2d(np.asarray(G, dtype=float))
    if not np.all(np.isfinite(G)):
        raise NumericError(f"Generalized prediction has non-finite entries: {G}.")
    n = G.shape[1]
    ordered = np.sort(G, axis=1)
    support = np.arange(1, n + 1)
    levels = (2.0 + np.cumsum(ordered, axis=1)) / support
    following = np.concatenate([ordered[:, 1:], np.full((G.shape[0], 1), np.inf)], axis=1)
    # The first support size whose level does not reach the next value.
    m = np.argmax(levels <= following, axis=1)
    s = levels[np.arange(G.shape[0]), m]
    predictions = np.maximum(s[:, None] - G, 0.0) / 2.0
    return predictions, s


def substitute(G) -> tuple[Distribution, float]:
    """Map a generalized prediction to a probability prediction."""
    G = np.asarray(G, dtype=float)
    if G.ndim != 1:
        raise InputError(f"Expected a 1-d generalized prediction, got shape {G.shape}.")
    predictions, s = substitute_batch(G[None, :])
    return Distribution(predictions[0]), float(s[0])


def generalized_prediction(state: AggregatorState, expert_preds) -> np.ndarray:
    """G(w) = -(1/eta) ln sum_k w^k exp(-eta * loss(w, expert k))."""
    losses = loss_table(_prediction_matrix(state, expert_preds))
    G = _generalized(state.log_weights[None, :], np.array([state.eta]), losses)[0]
    if not np.all(np.isfinite(G)):
        raise NumericError(f"Generalized prediction is not finite: {G}.")
    return G


def aa_step(state: AggregatorState, expert_preds) -> Distribution:
    """The aggregator's probability prediction for the current step."""
    return substitute(generalized_prediction(state, expert_preds))[0]


def sharpen_rows(probs: np.ndarray) -> np.ndarray:
    """Maximum rule applied along the last axis of a probability array."""
    tied = probs >= probs.max(axis=-1, keepdims=True) - TIE_TOLERANCE
    return tied / tied.sum(axis=-1, keepdims=True)


def sharpen(prediction: Distribution) -> Distribution:
    """Maximum rule: uniform weight over the most probable outcomes."""
    return Distribution(sharpen_rows(prediction.probs))


def update_weights(
    state: AggregatorState, outcome: int, expert_preds
) -> AggregatorState:
    """Multiply each weight by exp(-eta * loss) of its expert, then renormalise."""
    outcome = state.space.check(outcome)
    losses = loss_table(_prediction_matrix(state, expert_preds))[:, outcome]
    return dataclasses.replace(
        state, log_weights=state.log_weights - state.eta * losses
    )


def run_online(
    experts: Sequence,
    prior,
    eta: float,
    events: Iterable[tuple[object, int]],
    categorical: bool = False,
    space: OutcomeSpace = TRIPLET,
) -> list[StepRecord]:
    """Play the prediction-with-expert-advice game over ``events``.

    Each event is ``(expert_preds, outcome)``. With ``categorical`` the
    emitted prediction is sharpened by the maximum rule; weights always move
    on the experts' raw losses.
    """
    prior = np.asarray(prior, dtype=float)
    if prior.shape != (len(experts),):
        raise ConfigurationError(
            f"Prior has {prior.size} weights for a pool of {len(experts)} experts."
        )
    state = AggregatorState.initial(prior, eta, space)
    records: list[StepRecord] = []
    for expert_preds, outcome in events:
        outcome = space.check(outcome)
        matrix = _prediction_matrix(state, expert_preds)
        prediction = aa_step(state, matrix)
        if categorical:
            prediction = sharpen(prediction)
        records.append(
            StepRecord(
                prediction=prediction,
                outcome=outcome,
                learner_loss=brier_loss(outcome, prediction),
                expert_losses=loss_table(matrix)[:, outcome],
            )
        )
        state = update_weights(state, outcome, matrix)
    if not records:
        raise InputError("The online run needs at least one event.")
    logger.debug(
        f"Online run over {len(records)} steps with {len(experts)} experts, "
        f"eta={eta}, categorical={categorical}"
    )
    return records


def cumulative_losses(records: Sequence[StepRecord]) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative learner loss (N,) and per-expert cumulative losses (N, K)."""
    learner = np.cumsum([r.learner_loss for r in records])
    experts = np.cumsum(np.array([r.expert_losses for r in records]), axis=0)
    return learner, experts


def cumulative_regret(records: Sequence[StepRecord]) -> np.ndarray:
    """``L_N^k - L_N`` for every step N and expert k."""
    learner, experts = cumulative_losses(records)
    return experts - learner[:, None]


def batch_step(log_weights, etas, losses) -> np.ndarray:
    """Probability predictions of C aggregators sharing one loss table.

    ``log_weights`` is ``(C, K)``, ``etas`` is ``(C,)`` and ``losses`` is the
    ``(K, n)`` table of expert losses per outcome.
    """
    G = _generalized(np.asarray(log_weights, dtype=float), np.asarray(etas, dtype=float), losses)
    return substitute_batch(G)[0]


def batch_run(
    prior_logs, etas, losses, outcomes, categorical: bool = True
) -> np.ndarray:
    """Learner Brier losses of C aggregators run side by side.

    ``prior_logs`` is ``(C, K)`` (log prior weights), ``etas`` ``(C,)``,
    ``losses`` the ``(T, K, n)`` expert loss tables and ``outcomes`` ``(T,)``.
    Returns a ``(T, C)`` array.
    """
    log_weights = np.asarray(prior_logs, dtype=float).copy()
    etas = np.asarray(etas, dtype=float)
    log_weights -= logsumexp(log_weights, axis=1, keepdims=True)
    result = np.empty((len(outcomes), log_weights.shape[0]))
    for step, outcome in enumerate(outcomes):
        predictions = batch_step(log_weights, etas, losses[step])
        if categorical:
            predictions = sharpen_rows(predictions)
        result[step] = loss_table(predictions)[:, outcome]
        log_weights -= etas[:, None] * losses[step][:, outcome][None, :]
        log_weights -= logsumexp(log_weights, axis=1, keepdims=True)
    return result
