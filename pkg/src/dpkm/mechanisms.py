"""Differential-privacy primitives: Laplace noise, truncated-exponential angle and
offset samplers, a finite exponential mechanism, and the budget ledger."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

# Shrinks exact endpoint draws into open intervals.
ENDPOINT_NUDGE = 1e-12

# Sensitivity of the per-cluster counting query used at finalization.
COUNT_SENSITIVITY = 1.0

# Sensitivity of the (distance ratio, angle) scoring function.
SCORE_SENSITIVITY = 2.0


def laplace_sample(scale: float, rng: np.random.Generator, size=None):
    """Draw from Laplace(0, scale) by inverting the CDF.

    Returns a float when ``size`` is None, otherwise an array.
    """
    if not scale > 0:
        raise ValueError(f"Laplace scale must be positive, got {scale!r}")
    u = rng.random(size) - 0.5
    draw = -scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))
    return float(draw) if size is None else draw


def local_sensitivity_count() -> float:
    return COUNT_SENSITIVITY


def count_noise_scale(epsilon0: float) -> float:
    """Laplace scale for a noisy count released under ``epsilon0``."""
    if not epsilon0 > 0:
        raise ValueError(f"epsilon0 must be positive, got {epsilon0!r}")
    return local_sensitivity_count() / epsilon0


@dataclass(frozen=True)
class TruncatedExpDensity:
    """Density on [lo, hi] proportional to exp(intercept + slope * r).

    Both shipped densities have a log-weight linear in ``r``, which gives a
    closed-form inverse CDF.
    """

    lo: float
    hi: float
    intercept: float
    slope: float
    open_interval: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi) and self.lo < self.hi):
            raise ValueError(f"invalid support [{self.lo}, {self.hi}]")

    def log_weight(self, r):
        return self.intercept + self.slope * np.asarray(r, dtype=float)

    def weight(self, r):
        return np.exp(self.log_weight(r))

    def cdf(self, r):
        r = np.clip(np.asarray(r, dtype=float), self.lo, self.hi)
        s, width = self.slope, self.hi - self.lo
        if s == 0.0:
            return (r - self.lo) / width
        return np.expm1(s * (r - self.lo)) / np.expm1(s * width)

    def inverse_cdf(self, u):
        u = np.asarray(u, dtype=float)
        s, width = self.slope, self.hi - self.lo
        if s == 0.0:
            r = self.lo + u * width
        else:
            r = self.lo + np.log1p(u * np.expm1(s * width)) / s
        return np.clip(r, self.lo, self.hi)


# Angle used to shift the boundary point in the past-knowledge strategy.
GAMMA_DENSITY = TruncatedExpDensity(0.0, math.pi / 2, 1.0, -2.0 / math.pi)

# Offset ratio of the sampling-zone center along the mean -> controller segment.
LAMBDA_DENSITY = TruncatedExpDensity(0.5, 1.0, 2.0, -2.0, open_interval=True)


def truncated_exp_sample(density: TruncatedExpDensity, rng: np.random.Generator, size=None):
    r = density.inverse_cdf(rng.random(size))
    if density.open_interval:
        r = np.clip(r, density.lo + ENDPOINT_NUDGE, density.hi - ENDPOINT_NUDGE)
    return float(r) if size is None else r


def sample_gamma(rng: np.random.Generator) -> float:
    return truncated_exp_sample(GAMMA_DENSITY, rng)


def sample_lambda(rng: np.random.Generator) -> float:
    return truncated_exp_sample(LAMBDA_DENSITY, rng)


@dataclass(frozen=True)
class ScoredCandidate:
    payload: object
    score: float


def exp_mechanism_probabilities(scores, epsilon: float, delta_q: float) -> np.ndarray:
    """Selection probabilities proportional to exp(epsilon * score / (2 * delta_q))."""
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        raise ValueError("exponential mechanism needs at least one candidate")
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon!r}")
    if not delta_q > 0:
        raise ValueError(f"delta_q must be positive, got {delta_q!r}")
    if not np.all(np.isfinite(scores)):
        raise ValueError("candidate scores must be finite")
    logits = epsilon * (scores - scores.max()) / (2.0 * delta_q)
    weights = np.exp(logits)
    return weights / weights.sum()


def exp_mechanism_index(scores, epsilon: float, delta_q: float, rng: np.random.Generator, size=None):
    """Index of the candidate chosen by the exponential mechanism.

    With ``size`` set, returns an array of independent draws instead of an int.
    """
    probs = exp_mechanism_probabilities(scores, epsilon, delta_q)
    cdf = np.cumsum(probs)
    idx = np.minimum(np.searchsorted(cdf, rng.random(size) * cdf[-1], side="right"), probs.size - 1)
    return int(idx) if size is None else idx


def exp_mechanism_sample(
    candidates: Sequence[ScoredCandidate],
    epsilon: float,
    delta_q: float,
    rng: np.random.Generator,
) -> ScoredCandidate:
    if len(candidates) == 0:
        raise ValueError("exponential mechanism needs at least one candidate")
    idx = exp_mechanism_index([c.score for c in candidates], epsilon, delta_q, rng)
    return candidates[idx]


@dataclass
class BudgetLedger:
    """Per-iteration, per-cluster budgets plus the finalization budget."""

    per_iteration: list[list[float]] = field(default_factory=list)
    final: float = 0.0

    def record_iteration(self, budgets: Sequence[float]) -> None:
        budgets = [float(b) for b in budgets]
        if not budgets or any(not b > 0 for b in budgets):
            raise ValueError("iteration budgets must be a non-empty list of positive values")
        if self.per_iteration and len(budgets) != len(self.per_iteration[0]):
            raise ValueError("every iteration must list one budget per cluster")
        self.per_iteration.append(budgets)

    @property
    def iterations(self) -> int:
        return len(self.per_iteration)

    def total(self) -> float:
        return ledger_total(self)

    def to_dict(self) -> dict:
        return {"per_iteration": [list(b) for b in self.per_iteration], "final": self.final}


def ledger_total(ledger: BudgetLedger) -> float:
    """Sequential composition across iterations, parallel composition across clusters.

    The sum is correctly rounded (``math.fsum``), so it equals the exact
    rational total of the stored values rounded once.
    """
    return math.fsum([ledger.final] + [max(b) for b in ledger.per_iteration])
