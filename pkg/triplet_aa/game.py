"""Finite outcome spaces, probability predictions and the Brier loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from triplet_aa.errors import ConfigurationError, InputError

SUM_TOLERANCE = 1e-9


@dataclass(frozen=True)
class OutcomeSpace:
    size: int

    def __post_init__(self):
        if self.size < 2:
            raise ConfigurationError(
                f"An outcome space needs at least 2 outcomes, got {self.size}."
            )

    def check(self, outcome: int) -> int:
        """Return ``outcome`` if it indexes this space, else raise InputError."""
        if isinstance(outcome, (bool, np.bool_)) or not isinstance(
            outcome, (int, np.integer)
        ):
            raise InputError(f"Outcome must be an integer index, got {outcome!r}.")
        if not 0 <= outcome < self.size:
            raise InputError(
                f"Outcome {outcome} out of range for a space of size {self.size}."
            )
        return int(outcome)


# Sample positions within a triplet.
TRIPLET = OutcomeSpace(3)


@dataclass(frozen=True, eq=False)
class Distribution:
    """A probability vector over a finite outcome space.

    The vector is validated and renormalised once, here; it is read-only
    afterwards.
    """

    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float)
        if probs.ndim != 1 or probs.size < 2:
            raise InputError(
                f"A distribution needs a 1-d vector of length >= 2, got shape {probs.shape}."
            )
        if not np.all(np.isfinite(probs)):
            raise InputError(f"Distribution has non-finite entries: {probs}.")
        if np.any(probs < -SUM_TOLERANCE):
            raise InputError(f"Distribution has negative entries: {probs}.")
        total = probs.sum()
        if abs(total - 1.0) > SUM_TOLERANCE:
            raise InputError(f"Distribution sums to {total!r}, not 1.")
        probs = np.clip(probs, 0.0, None)
        probs /= probs.sum()
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_weights(cls, weights) -> Distribution:
        """Normalise nonnegative weights into a distribution."""
        weights = np.asarray(weights, dtype=float)
        total = weights.sum()
        if not np.isfinite(total) or total <= 0 or np.any(weights < 0):
            raise InputError(f"Cannot normalise weights {weights}.")
        return cls(weights / total)

    @classmethod
    def uniform(cls, space: OutcomeSpace = TRIPLET) -> Distribution:
        return cls(np.full(space.size, 1.0 / space.size))

    @property
    def space(self) -> OutcomeSpace:
        return OutcomeSpace(self.probs.size)

    def __len__(self) -> int:
        return self.probs.size

    def __getitem__(self, outcome: int) -> float:
        return float(self.probs[outcome])

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.probs, dtype=dtype)

    def __repr__(self) -> str:
        return f"Distribution({np.array2string(self.probs, precision=6)})"


def point_mass(outcome: int, space: OutcomeSpace = TRIPLET) -> Distribution:
    """The distribution concentrated at ``outcome``."""
    probs = np.zeros(space.size)
    probs[space.check(outcome)] = 1.0
    return Distribution(probs)


def brier_loss(outcome: int, prediction: Distribution) -> float:
    """Squared distance between ``prediction`` and the point mass at ``outcome``."""
    outcome = prediction.space.check(outcome)
    diff = prediction.probs.copy()
    diff[outcome] -= 1.0
    return float(np.dot(diff, diff))


def half_loss(outcome: int, prediction: Distribution) -> float:
    """Half the Brier loss: 0 or 1 for strict predictions."""
    return brier_loss(outcome, prediction) / 2.0


def loss_table(predictions) -> np.ndarray:
    """Brier loss of every prediction against every outcome.

    ``predictions`` has shape ``(..., n)``; entry ``[..., o]`` of the result
    is the loss suffered when outcome ``o`` occurs.
    """
    predictions = np.asarray(predictions, dtype=float)
    squares = np.sum(predictions * predictions, axis=-1, keepdims=True)
    return squares - 2.0 * predictions + 1.0
