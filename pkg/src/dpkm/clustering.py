"""Lloyd's algorithm, convergent DP k-means with orientation-controlled sampling
zones, and simple Laplace-schedule baselines.

Datasets are ``(N, d)`` float arrays and centroid sets are ``(k, d)`` arrays.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .geometry import Ball, Converged, SamplingFrame
from .mechanisms import (
    SCORE_SENSITIVITY,
    BudgetLedger,
    count_noise_scale,
    exp_mechanism_index,
    laplace_sample,
    sample_gamma,
    sample_lambda,
)

DEFAULT_GRID = (64, 64)
MIN_GRID = 16


class ClusteringError(ValueError):
    pass


class GridTooCoarse(ClusteringError):
    """No candidate of the (delta, alpha) grid falls inside the sampling zone."""


class Strategy(str, enum.Enum):
    """Orientation controller used to place the sampling zone.

    ``POSTERIOR`` uses past knowledge only (a randomly shifted continuation of
    the last centroid move); ``PRIOR`` additionally uses the next Lloyd mean.
    """

    POSTERIOR = "posterior"
    PRIOR = "prior"

    @classmethod
    def parse(cls, value: "str | Strategy") -> "Strategy":
        if isinstance(value, cls):
            return value
        aliases = {
            "posterior": cls.POSTERIOR,
            "past": cls.POSTERIOR,
            "prior": cls.PRIOR,
            "past_and_future": cls.PRIOR,
            "future": cls.PRIOR,
        }
        try:
            return aliases[str(value).lower().replace("-", "_")]
        except KeyError:
            raise ClusteringError(f"unknown strategy {value!r}") from None


def as_dataset(data) -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ClusteringError(f"dataset must be a non-empty (N, d) array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ClusteringError("dataset contains non-finite values")
    return arr


def _as_centroids(centroids, d: int) -> np.ndarray:
    arr = np.asarray(centroids, dtype=float)
    if arr.ndim == 1 and d == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[1] != d or arr.shape[0] == 0:
        raise ClusteringError(f"centroids must have shape (k, {d}), got {arr.shape}")
    return arr


# ---------------------------------------------------------------------------
# Lloyd building blocks


def cost(data, centroids, assignments) -> float:
    """k-means cost: summed squared distance of each point to its assigned centroid."""
    data = as_dataset(data)
    centroids = _as_centroids(centroids, data.shape[1])
    assignments = np.asarray(assignments)
    if assignments.shape != (data.shape[0],):
        raise ClusteringError("one assignment per point is required")
    if assignments.size and (assignments.min() < 0 or assignments.max() >= centroids.shape[0]):
        raise ClusteringError("assignment index out of range")
    diff = data - centroids[assignments]
    return float(np.einsum("ij,ij->", diff, diff))


def _sq_dists(data: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = data[:, None, :] - centroids[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def assign(data, centroids) -> np.ndarray:
    """Nearest-centroid assignment; ties go to the lowest cluster index."""
    data = as_dataset(data)
    centroids = _as_centroids(centroids, data.shape[1])
    return np.argmin(_sq_dists(data, centroids), axis=1)


def centroid_cost(data, centroids) -> float:
    """Cost of a centroid set under its own nearest-centroid assignment."""
    data = as_dataset(data)
    centroids = _as_centroids(centroids, data.shape[1])
    return float(_sq_dists(data, centroids).min(axis=1).sum())


def cluster_sums(data: np.ndarray, assignments: np.ndarray, k: int):
    counts = np.bincount(assignments, minlength=k).astype(float)
    sums = np.zeros((k, data.shape[1]))
    np.add.at(sums, assignments, data)
    return sums, counts


def recentroid(data, assignments, k: int, prev_centroids) -> np.ndarray:
    """Cluster means; an empty cluster keeps its previous centroid."""
    data = as_dataset(data)
    prev = _as_centroids(prev_centroids, data.shape[1])
    sums, counts = cluster_sums(data, np.asarray(assignments), k)
    out = prev.copy()
    nonempty = counts > 0
    out[nonempty] = sums[nonempty] / counts[nonempty, None]
    return out


def sample_init(data, k: int, rng: np.random.Generator) -> np.ndarray:
    """Pick ``k`` distinct records uniformly at random as initial centroids."""
    data = as_dataset(data)
    if not 1 <= k <= data.shape[0]:
        raise ClusteringError(f"k must lie in [1, N={data.shape[0]}], got {k}")
    idx = rng.choice(data.shape[0], size=k, replace=False)
    return data[np.sort(idx)].copy()


@dataclass
class ClusteringState:
    centroids: np.ndarray
    assignments: np.ndarray
    iteration: int
    cost_trace: list[float]
    converged: bool
    cost: float


def lloyd(data, k: int, init_centroids, max_iter: int = 1000, rng=None) -> ClusteringState:
    """Plain Lloyd iteration from fixed initial centroids.

    The iteration count includes the final pass in which nothing changes.
    ``rng`` is accepted for interface symmetry and is unused.
    """
    data = as_dataset(data)
    centroids = _as_centroids(init_centroids, data.shape[1]).copy()
    if centroids.shape[0] != k:
        raise ClusteringError(f"expected {k} initial centroids, got {centroids.shape[0]}")
    if k > data.shape[0]:
        raise ClusteringError("k exceeds the number of points")
    trace: list[float] = []
    prev_assign = None
    converged = False
    assignments = assign(data, centroids)
    t = 0
    while t < max_iter:
        t += 1
        assignments = assign(data, centroids)
        trace.append(cost(data, centroids, assignments))
        means = recentroid(data, assignments, k, centroids)
        done = np.array_equal(means, centroids) or (
            prev_assign is not None and np.array_equal(assignments, prev_assign)
        )
        centroids = means
        prev_assign = assignments
        if done:
            converged = True
            break
    return _state(data, centroids, assignments, t, trace, converged)


def _state(data, centroids, assignments, t, trace, converged) -> ClusteringState:
    return ClusteringState(centroids, assignments, t, trace, converged, cost(data, centroids, assignments))


def cost_split_gap(cluster_points, s_prev, s_cur, tol: float = 1e-9) -> tuple[float, float]:
    """Both sides of the cost-drop identity for one cluster.

    Moving the centroid of a cluster from ``s_prev`` to its mean ``s_cur``
    lowers the cluster cost by exactly ``|C| * ||s_prev - s_cur||**2``.

    Returns:
        (lhs, rhs): the measured cost drop and the closed-form value.
    """
    pts = as_dataset(cluster_points)
    s_prev = geometry.as_vector(s_prev)
    s_cur = geometry.as_vector(s_cur)
    m = pts.mean(axis=0)
    if np.linalg.norm(m - s_cur) > tol * max(1.0, float(np.linalg.norm(m))):
        raise ClusteringError("s_cur must be the mean of the cluster")
    lhs = float(((pts - s_prev) ** 2).sum() - ((pts - s_cur) ** 2).sum())
    rhs = float(pts.shape[0] * ((s_prev - s_cur) ** 2).sum())
    return lhs, rhs


# ---------------------------------------------------------------------------
# Sampling zones


def _past_controller(s_prev, s_cur, rng, gamma=None, ortho=None):
    """Returns (controller, gamma, frame_ortho) for the past-knowledge strategy."""
    s_prev, s_cur = geometry.as_vector(s_prev), geometry.as_vector(s_cur)
    move = s_cur - s_prev
    a = float(np.linalg.norm(move))
    if a == 0.0:
        raise Converged("centroid did not move")
    # far intersection of the zone boundary with the line through both centroids
    y = s_cur + move
    if s_cur.size == 1:
        return y, 0.0, None
    v_hat = move / a
    u = geometry.random_orthonormal(v_hat, rng) if ortho is None else geometry.as_vector(ortho)
    g = sample_gamma(rng) if gamma is None else float(gamma)
    x = geometry.rotate_about(s_cur, y, g, u)
    # ortho of the rotated axis, kept in the same plane
    frame_ortho = -math.sin(g) * v_hat + math.cos(g) * u
    return x, g, frame_ortho


def orientation_past(s_prev, s_cur, rng, gamma=None, ortho=None) -> np.ndarray:
    """Boundary point opposite ``s_prev`` shifted along the boundary by a random angle."""
    return _past_controller(s_prev, s_cur, rng, gamma, ortho)[0]


def future_means(data, real_means) -> np.ndarray:
    """Means of the partition obtained by reassigning all points to ``real_means``."""
    data = as_dataset(data)
    real_means = _as_centroids(real_means, data.shape[1])
    return recentroid(data, assign(data, real_means), real_means.shape[0], real_means)


def orientation_future(data, all_real_means, i: int) -> np.ndarray:
    """Next Lloyd mean of cluster ``i`` (its current mean if it would be empty)."""
    return future_means(data, all_real_means)[i]


@dataclass(frozen=True)
class SamplingZoneSpec:
    """Sampling ball plus the frame its candidates are parametrized in.

    ``bound`` is the convergent-zone radius when known; sampled centroids are
    kept strictly within it as well.
    """

    ball: Ball
    frame: SamplingFrame
    lam: float
    bound: float | None = None


def build_sampling_zone(s_cur, x, rng, lam=None, ortho=None, bound=None) -> SamplingZoneSpec:
    """Ball centered ``lam`` of the way from ``s_cur`` to ``x`` and touching ``x``."""
    s_cur, x = geometry.as_vector(s_cur), geometry.as_vector(x)
    offset = x - s_cur
    b = float(np.linalg.norm(offset))
    if b == 0.0:
        raise Converged("orientation controller coincides with the cluster mean")
    lam = sample_lambda(rng) if lam is None else float(lam)
    axis = offset / b
    if s_cur.size == 1:
        ortho = None
    elif ortho is None:
        ortho = geometry.random_orthonormal(axis, rng)
    else:
        ortho = geometry.as_vector(ortho)
    center = s_cur + lam * offset
    radius = (1.0 - lam) * b
    return SamplingZoneSpec(Ball(center, radius), SamplingFrame(s_cur, axis, ortho, b), lam, bound)


def score(delta, alpha):
    """Quality of a (distance ratio, angle) pair; highest at the cluster mean."""
    return (1.0 - np.asarray(delta)) + (1.0 - 2.0 * np.abs(np.asarray(alpha)) / math.pi)


def zone_candidates(zone: SamplingZoneSpec, grid=DEFAULT_GRID):
    """Grid of cell-centered (delta, alpha) pairs covering the zone, filtered to it.

    The grid spans the polar bounding box of the ball as seen from the frame
    origin, so its resolution does not degrade for small zones.

    Returns:
        (points, delta, alpha) for candidates strictly inside the ball (and
        inside ``zone.bound`` when set).
    """
    n_delta, n_alpha = int(grid[0]), int(grid[1])
    frame = zone.frame
    if frame.ortho is None:
        n_alpha = 1
    if n_delta < MIN_GRID or (frame.ortho is not None and n_alpha < MIN_GRID):
        raise ClusteringError(f"grid must be at least {MIN_GRID} per axis, got {grid}")
    lam = zone.lam
    delta_lo = max(0.0, 2.0 * lam - 1.0)
    half_angle = math.asin(min(1.0, (1.0 - lam) / lam)) if frame.ortho is not None else 0.0
    u_delta = (np.arange(n_delta) + 0.5) / n_delta
    u_alpha = (np.arange(n_alpha) + 0.5) / n_alpha
    delta = delta_lo + (1.0 - delta_lo) * u_delta
    alpha = half_angle * (2.0 * u_alpha - 1.0)
    dd, aa = np.meshgrid(delta, alpha, indexing="ij")
    dd, aa = dd.ravel(), aa.ravel()
    pts = frame.point(dd, aa)
    keep = zone.ball.contains_many(pts)
    if zone.bound is not None:
        keep &= np.linalg.norm(pts - frame.origin, axis=1) < zone.bound
    return pts[keep], dd[keep], aa[keep]


def sample_private_centroid(zone: SamplingZoneSpec, epsilon: float, grid=DEFAULT_GRID, rng=None):
    """Draw a private centroid from the zone with the exponential mechanism.

    Returns:
        (point, delta, alpha) of the selected candidate.
    """
    pts, dd, aa = zone_candidates(zone, grid)
    if pts.shape[0] == 0:
        raise GridTooCoarse(f"no grid candidate inside the sampling zone (grid={grid})")
    idx = exp_mechanism_index(score(dd, aa), epsilon, SCORE_SENSITIVITY, rng)
    return pts[idx].copy(), float(dd[idx]), float(aa[idx])


def sample_private_centroids(zone: SamplingZoneSpec, epsilon: float, size: int, grid=DEFAULT_GRID, rng=None):
    """Batch of independent draws from the same zone.

    Returns:
        (points, delta, alpha) arrays with ``size`` rows.
    """
    pts, dd, aa = zone_candidates(zone, grid)
    if pts.shape[0] == 0:
        raise GridTooCoarse(f"no grid candidate inside the sampling zone (grid={grid})")
    idx = exp_mechanism_index(score(dd, aa), epsilon, SCORE_SENSITIVITY, rng, size=size)
    return pts[idx], dd[idx], aa[idx]


# ---------------------------------------------------------------------------
# Finalization and the DP loop


def finalize_laplace(data, assignments, k: int, epsilon0: float, rng, fallback=None, clip=True):
    """Cluster means with Laplace noise on the counts.

    The noisy count is clamped below at 1 and the result clipped to the unit
    box. ``epsilon0 = inf`` releases exact means. Empty clusters return the
    matching ``fallback`` row when one is given.
    """
    data = as_dataset(data)
    sums, counts = cluster_sums(data, np.asarray(assignments), k)
    if math.isinf(epsilon0) and epsilon0 > 0:
        noise = np.zeros(k)
    else:
        noise = laplace_sample(count_noise_scale(epsilon0), rng, size=k)
    noisy = np.maximum(counts + noise, 1.0)
    out = sums / noisy[:, None]
    if fallback is not None:
        fallback = _as_centroids(fallback, data.shape[1])
        empty = counts == 0
        out[empty] = fallback[empty]
    if clip:
        out = np.clip(out, 0.0, 1.0)
    return out


@dataclass
class DPConfig:
    """Loop controls for :func:`dp_kmeans`.

    ``noiseless`` is a test hook: the private centroid is the real mean, the
    final release is exact and the tolerance test is disabled, so the run
    reduces to Lloyd's algorithm.
    """

    tol: float = 1e-4
    max_iter: int = 200
    grid: tuple[int, int] = DEFAULT_GRID
    noiseless: bool = False


@dataclass
class IterationRecord:
    """Per-cluster geometry of one DP iteration, kept for diagnostics and tests.

    Arrays have one entry per cluster; NaN marks clusters that were not sampled
    (zero movement or a controller at the mean).
    """

    zone_radius: np.ndarray  # convergent-zone radius
    reach: np.ndarray  # ||P - S|| + r
    private_dist: np.ndarray  # ||S_hat - S||
    in_ball: np.ndarray
    delta: np.ndarray
    alpha: np.ndarray
    lam: np.ndarray


@dataclass
class DPRunResult:
    final_centroids: np.ndarray
    prenoise_centroids: np.ndarray
    iterations: int
    ledger: BudgetLedger
    cost_trace: list[float]
    converged: bool
    records: list[IterationRecord] = field(default_factory=list)
    lloyd_reference: ClusteringState | None = None

    @property
    def epsilon_total(self) -> float:
        return self.ledger.total()


def dp_kmeans(
    data,
    k: int,
    strategy="prior",
    eps_iter: float = 0.1,
    eps0: float = 0.1,
    config: DPConfig | None = None,
    rng: np.random.Generator | None = None,
    init_centroids=None,
    with_lloyd: bool = False,
) -> DPRunResult:
    """Differentially private k-means with guaranteed cost descent.

    Each iteration assigns points to the previous private centroids, takes the
    real means, builds a sampling zone inside the convergent zone of each
    cluster and draws the new private centroid from it. The loop stops when the
    assignments repeat or every real mean is within ``tol`` of its private
    predecessor; the final partition's means are released with noisy counts.

    Every executed iteration, including the one that detects convergence, is
    charged ``eps_iter`` per cluster.
    """
    data = as_dataset(data)
    strategy = Strategy.parse(strategy)
    config = config or DPConfig()
    rng = rng if rng is not None else np.random.default_rng()
    n, d = data.shape
    if not 1 <= k <= n:
        raise ClusteringError(f"k must lie in [1, N={n}], got {k}")
    if not eps_iter > 0:
        raise ClusteringError(f"eps_iter must be positive, got {eps_iter!r}")
    if not config.noiseless and not eps0 > 0:
        raise ClusteringError(f"eps0 must be positive, got {eps0!r}")
    if init_centroids is None:
        init_centroids = sample_init(data, k, rng)
    centroids = _as_centroids(init_centroids, d).copy()
    if centroids.shape[0] != k:
        raise ClusteringError(f"expected {k} initial centroids, got {centroids.shape[0]}")

    ledger = BudgetLedger(final=0.0 if config.noiseless else float(eps0))
    trace: list[float] = []
    records: list[IterationRecord] = []
    prev_assign = None
    converged = False
    tol = 0.0 if config.noiseless else config.tol
    means = centroids
    assignments = assign(data, centroids)
    for _ in range(config.max_iter):
        assignments = assign(data, centroids)
        trace.append(cost(data, centroids, assignments))
        means = recentroid(data, assignments, k, centroids)
        ledger.record_iteration([eps_iter] * k)
        moves = np.linalg.norm(means - centroids, axis=1)
        repeated = prev_assign is not None and np.array_equal(assignments, prev_assign)
        if repeated or moves.max() < tol or moves.max() == 0.0:
            converged = True
            break
        prev_assign = assignments
        if config.noiseless:
            centroids = means
            continue
        centroids, record = _private_step(data, centroids, means, moves, strategy, eps_iter, config, rng)
        records.append(record)

    if config.noiseless:
        final = means.copy()
    else:
        final = finalize_laplace(data, assignments, k, eps0, rng, fallback=means)
    result = DPRunResult(final, means.copy(), len(ledger.per_iteration), ledger, trace, converged, records)
    if with_lloyd:
        result.lloyd_reference = lloyd(data, k, init_centroids)
    return result


def _private_step(data, centroids, means, moves, strategy, eps_iter, config, rng):
    k = means.shape[0]
    nan = np.full(k, np.nan)
    rec = IterationRecord(moves.copy(), nan.copy(), nan.copy(), np.ones(k, bool), nan.copy(), nan.copy(), nan.copy())
    new = means.copy()
    targets = future_means(data, means) if strategy is Strategy.PRIOR else None
    for i in range(k):
        a = moves[i]
        if a == 0.0:
            continue
        if strategy is Strategy.PRIOR:
            x = targets[i]
            b = float(np.linalg.norm(x - means[i]))
            if b == 0.0:
                # controller at the mean: the zone collapses onto it
                rec.private_dist[i] = 0.0
                rec.reach[i] = 0.0
                continue
            if b > a:
                # keep the controller on or inside the convergent zone
                x = means[i] + (a / b) * (x - means[i])
            ortho = None
        else:
            x, _, ortho = _past_controller(centroids[i], means[i], rng)
        zone = build_sampling_zone(means[i], x, rng, ortho=ortho, bound=a)
        s_hat, delta, alpha = sample_private_centroid(zone, eps_iter, config.grid, rng)
        new[i] = s_hat
        rec.reach[i] = float(np.linalg.norm(zone.ball.center - means[i])) + zone.ball.radius
        rec.private_dist[i] = float(np.linalg.norm(s_hat - means[i]))
        rec.in_ball[i] = zone.ball.contains(s_hat)
        rec.delta[i], rec.alpha[i], rec.lam[i] = delta, alpha, zone.lam
    return new, rec


# ---------------------------------------------------------------------------
# Laplace-schedule baselines


@dataclass(frozen=True)
class Schedule:
    """Top-down split of a total budget over iterations.

    ``uniform`` spends ``eps_total / T`` in each of ``T`` iterations;
    ``halving`` spends ``eps_total / 2**i`` in iteration ``i`` until the share
    drops below ``1e-3 * eps_total``.
    """

    kind: str
    iterations: int | None = None

    @classmethod
    def uniform(cls, iterations: int) -> "Schedule":
        if iterations < 1:
            raise ClusteringError("uniform schedule needs at least one iteration")
        return cls("uniform", int(iterations))

    @classmethod
    def halving(cls) -> "Schedule":
        return cls("halving")

    @property
    def name(self) -> str:
        return self.kind

    def budgets(self, eps_total: float) -> list[float]:
        if not eps_total > 0:
            raise ClusteringError(f"eps_total must be positive, got {eps_total!r}")
        if self.kind == "uniform":
            return [eps_total / self.iterations] * self.iterations
        if self.kind == "halving":
            out, i = [], 1
            while eps_total / 2**i >= 1e-3 * eps_total:
                out.append(eps_total / 2**i)
                i += 1
            return out
        raise ClusteringError(f"unknown schedule {self.kind!r}")


def baseline_laplace(
    data,
    k: int,
    schedule: Schedule,
    eps_total: float,
    rng: np.random.Generator | None = None,
    init_centroids=None,
    noise_multiplier: float = 1.0,
) -> DPRunResult:
    """Lloyd loop whose centroids are released as noisy sum / noisy count.

    Each iteration's budget is split evenly between the per-cluster sum
    (L1 sensitivity ``d`` on unit-box data) and count (sensitivity 1).
    ``noise_multiplier = 0`` turns the noise off.
    """
    data = as_dataset(data)
    rng = rng if rng is not None else np.random.default_rng()
    n, d = data.shape
    if not 1 <= k <= n:
        raise ClusteringError(f"k must lie in [1, N={n}], got {k}")
    if init_centroids is None:
        init_centroids = sample_init(data, k, rng)
    centroids = _as_centroids(init_centroids, d).copy()
    ledger = BudgetLedger(final=0.0)
    trace: list[float] = []
    prev_assign = None
    repeated = False
    for eps_t in schedule.budgets(eps_total):
        assignments = assign(data, centroids)
        trace.append(cost(data, centroids, assignments))
        repeated = prev_assign is not None and np.array_equal(assignments, prev_assign)
        prev_assign = assignments
        sums, counts = cluster_sums(data, assignments, k)
        ledger.record_iteration([eps_t] * k)
        if noise_multiplier == 0:
            centroids = recentroid(data, assignments, k, centroids)
            continue
        half = eps_t / 2.0
        sums = sums + noise_multiplier * laplace_sample(d / half, rng, size=(k, d))
        counts = counts + noise_multiplier * laplace_sample(1.0 / half, rng, size=k)
        centroids = np.clip(sums / np.maximum(counts, 1.0)[:, None], 0.0, 1.0)
    return DPRunResult(centroids, centroids.copy(), ledger.iterations, ledger, trace, repeated)
