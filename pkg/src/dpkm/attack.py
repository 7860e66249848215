"""Difference attack on released cluster means, with and without DP noise.

An adversary holding every record but one, plus the released mean and size of
the victim's cluster, recovers the missing record exactly from two means.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .clustering import as_dataset, lloyd, sample_init
from .mechanisms import count_noise_scale, laplace_sample


@dataclass(frozen=True)
class ReleasePair:
    n: int
    mean_with: np.ndarray
    mean_without: np.ndarray

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("the cluster must hold at least two records")


def reconstruct_missing(pair: ReleasePair) -> np.ndarray:
    """Missing record from the means with and without it."""
    with_ = geometry.as_vector(pair.mean_with)
    without = geometry.as_vector(pair.mean_without)
    if with_.shape != without.shape:
        raise geometry.GeometryError("mean dimensions differ")
    return pair.n * with_ - (pair.n - 1) * without


def noisy_mean(points: np.ndarray, epsilon0: float, rng) -> np.ndarray:
    """Mean released with Laplace noise on the count (clamped at 1)."""
    count = points.shape[0] + laplace_sample(count_noise_scale(epsilon0), rng)
    return points.sum(axis=0) / max(count, 1.0)


@dataclass
class DemoResult:
    record_index: int
    cluster_size: int
    true_x0: np.ndarray
    exact_reconstruction: np.ndarray
    exact_error: float
    epsilon0: float | None
    dp_reconstructions: list[np.ndarray] = field(default_factory=list)
    dp_errors: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "record_index": self.record_index,
            "cluster_size": self.cluster_size,
            "true_x0": self.true_x0.tolist(),
            "exact_reconstruction": self.exact_reconstruction.tolist(),
            "exact_error": self.exact_error,
            "epsilon0": self.epsilon0,
            "dp_reconstructions": [r.tolist() for r in self.dp_reconstructions],
            "dp_errors": list(self.dp_errors),
        }


def demo(data, k: int, eps0: float | None, rng: np.random.Generator, releases: int = 1) -> DemoResult:
    """Attack one random record of one cluster.

    The dataset is clustered once with Lloyd's algorithm; a record whose
    cluster has at least two members is removed, and that cluster's mean is
    released with and without it. ``eps0`` of None (or 0) skips the noisy
    releases; ``inf`` makes them exact.
    """
    data = as_dataset(data)
    if data.shape[0] < k + 1:
        raise ValueError("need at least k + 1 records")
    state = lloyd(data, k, sample_init(data, k, rng))
    sizes = np.bincount(state.assignments, minlength=k)
    eligible = np.flatnonzero(sizes[state.assignments] >= 2)
    idx = int(rng.choice(eligible))
    members = np.flatnonzero(state.assignments == state.assignments[idx])
    cluster = data[members]
    rest = data[members[members != idx]]
    x0 = data[idx].copy()
    n = cluster.shape[0]

    exact = reconstruct_missing(ReleasePair(n, cluster.mean(axis=0), rest.mean(axis=0)))
    result = DemoResult(idx, n, x0, exact, float(np.linalg.norm(exact - x0)), None)
    if eps0 is None or eps0 == 0:
        return result
    result.epsilon0 = float(eps0)
    for _ in range(releases):
        if math.isinf(eps0):
            pair = ReleasePair(n, cluster.mean(axis=0), rest.mean(axis=0))
        else:
            pair = ReleasePair(n, noisy_mean(cluster, eps0, rng), noisy_mean(rest, eps0, rng))
        guess = reconstruct_missing(pair)
        result.dp_reconstructions.append(guess)
        result.dp_errors.append(float(np.linalg.norm(guess - x0)))
    return result


def run_demos(data, k: int, eps0: float | None, demos: int = 100, seed: int = 0) -> dict:
    """Repeat :func:`demo` with independent seeds and summarize the errors."""
    results = [demo(data, k, eps0, np.random.default_rng([seed, i])) for i in range(demos)]
    exact = np.array([r.exact_error for r in results])
    summary = {
        "k": k,
        "demos": demos,
        "seed": seed,
        "epsilon0": None if not eps0 else float(eps0),
        "noise_free": {"max_error": float(exact.max()), "median_error": float(np.median(exact))},
        "dp": None,
        "runs": [r.to_dict() for r in results],
    }
    if eps0:
        errs = np.array([e for r in results for e in r.dp_errors])
        summary["dp"] = {
            "median_error": float(np.median(errs)),
            "mean_error": float(errs.mean()),
            "min_error": float(errs.min()),
            "max_error": float(errs.max()),
            "fraction_above_0.1": float((errs > 0.1).mean()),
            "quartiles": [float(q) for q in np.quantile(errs, [0.25, 0.5, 0.75])],
        }
    return summary
