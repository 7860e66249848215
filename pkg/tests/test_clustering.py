import math

import numpy as np
import pytest
from scipy import stats

from dpkm import clustering as C
from dpkm.geometry import Converged
from dpkm.mechanisms import ledger_total


def brute_cost(points, centroids, assignments):
    total = 0.0
    for x, a in zip(points, assignments):
        total += sum((xi - ci) ** 2 for xi, ci in zip(x, centroids[a]))
    return total


SQUARE = np.array([[0, 0], [2, 0], [0, 2], [2, 2]], dtype=float)


def test_cost_examples():
    assert C.cost([[0], [2]], [[1]], [0, 0]) == 2.0
    assert C.cost(SQUARE, [[1, 1]], [0, 0, 0, 0]) == 8.0
    assert C.cost(SQUARE, [[0, 0]], [0, 0, 0, 0]) == 16.0


def test_cost_rejects_bad_index():
    with pytest.raises(C.ClusteringError):
        C.cost([[0], [1]], [[0]], [0, 1])


def test_assign_examples():
    np.testing.assert_array_equal(C.assign([[0], [1], [9], [10]], [[0], [9]]), [0, 0, 1, 1])
    assert C.assign([[1.0]], [[0.0], [2.0]])[0] == 0
    np.testing.assert_array_equal(C.assign(SQUARE, [[5, 5]]), [0, 0, 0, 0])


def test_recentroid_examples():
    data = np.array([[0], [1], [9], [10]], dtype=float)
    np.testing.assert_allclose(C.recentroid(data, [0, 0, 1, 1], 2, [[0], [9]]), [[0.5], [9.5]])
    np.testing.assert_allclose(C.recentroid(data, [0, 0, 0, 0], 2, [[0], [7]]), [[5.0], [7.0]])


def test_lloyd_hand_example():
    state = C.lloyd([[0], [1], [9], [10]], 2, [[0], [9]])
    np.testing.assert_allclose(state.centroids, [[0.5], [9.5]])
    assert state.cost == 1.0
    assert state.iteration == 2
    assert state.cost_trace == [2.0, 1.0]
    assert state.converged


def test_lloyd_fixed_point_takes_one_iteration(iris, rng):
    first = C.lloyd(iris, 3, C.sample_init(iris, 3, rng))
    again = C.lloyd(iris, 3, first.centroids)
    assert again.iteration == 1
    np.testing.assert_array_equal(again.centroids, first.centroids)


def test_lloyd_k_equals_n():
    data = np.array([[0.1, 0.2], [0.5, 0.9], [0.8, 0.3]])
    state = C.lloyd(data, 3, data)
    assert state.cost == 0.0
    np.testing.assert_array_equal(state.centroids, data)


def test_lloyd_trace_decreasing_and_deterministic(iris):
    init = iris[[3, 60, 120]]
    a = C.lloyd(iris, 3, init)
    b = C.lloyd(iris, 3, init)
    np.testing.assert_array_equal(a.centroids, b.centroids)
    assert all(y < x for x, y in zip(a.cost_trace[:-1], a.cost_trace[1:-1])) or len(a.cost_trace) <= 2
    assert all(y <= x for x, y in zip(a.cost_trace, a.cost_trace[1:]))
    assert a.cost == pytest.approx(brute_cost(iris, a.centroids, a.assignments), rel=1e-9)


def test_cost_split_examples():
    assert C.cost_split_gap(SQUARE, [0, 0], [1, 1]) == (8.0, 8.0)
    assert C.cost_split_gap(SQUARE, [1, 1], [1, 1]) == (0.0, 0.0)
    with pytest.raises(C.ClusteringError):
        C.cost_split_gap(SQUARE, [0, 0], [1, 1.5])


def test_cost_split_against_brute_force(rng):
    for _ in range(1000):
        n, d = int(rng.integers(1, 101)), int(rng.integers(1, 11))
        pts = rng.random((n, d))
        s_cur = pts.mean(axis=0)
        s_prev = rng.random(d)
        lhs, rhs = C.cost_split_gap(pts, s_prev, s_cur)
        oracle = brute_cost(pts, [s_prev], [0] * n) - brute_cost(pts, [s_cur], [0] * n)
        assert abs(lhs - rhs) <= 1e-9 * max(1.0, lhs)
        assert abs(oracle - rhs) <= 1e-9 * max(1.0, oracle)


def test_orientation_past_without_shift(rng):
    x = C.orientation_past([4.24, 4.24], [0, 0], rng, gamma=0.0)
    np.testing.assert_allclose(x, [-4.24, -4.24])


def test_orientation_past_quarter_turn(rng):
    move = np.array([-4.24, -4.24])
    v = move / np.linalg.norm(move)
    ortho = np.array([-v[1], v[0]])
    x = C.orientation_past([4.24, 4.24], [0, 0], rng, gamma=math.pi / 2, ortho=ortho)
    assert abs(x.dot(v)) < 1e-12
    assert np.linalg.norm(x) == pytest.approx(np.linalg.norm(move), rel=1e-12)


def test_orientation_past_stays_on_boundary(rng):
    s_prev, s_cur = np.array([0.3, 0.7, 0.1]), np.array([0.5, 0.4, 0.2])
    a = np.linalg.norm(s_prev - s_cur)
    for _ in range(1000):
        x = C.orientation_past(s_prev, s_cur, rng)
        assert abs(np.linalg.norm(x - s_cur) - a) <= 1e-12 * a


def test_orientation_past_one_dim(rng):
    np.testing.assert_allclose(C.orientation_past([1.0], [0.0], rng), [-1.0])
    with pytest.raises(Converged):
        C.orientation_past([0.2, 0.2], [0.2, 0.2], rng)


def test_orientation_future_examples(iris, rng):
    data = np.array([[0], [1], [9], [10]], dtype=float)
    # real means of the partition induced by centroids {0, 9}
    assert C.orientation_future(data, [[0.5], [9.5]], 0)[0] == 0.5
    assert C.orientation_future(data, [[0.0], [9.0]], 0)[0] == 0.5
    fixed = C.lloyd(iris, 3, C.sample_init(iris, 3, rng)).centroids
    for i in range(3):
        np.testing.assert_array_equal(C.orientation_future(iris, fixed, i), fixed[i])


def test_build_sampling_zone_offset_example(rng):
    zone = C.build_sampling_zone([0, 0], [1, -5], rng, lam=0.6)
    np.testing.assert_allclose(zone.ball.center, [0.6, -3.0])
    assert zone.ball.radius == pytest.approx(math.sqrt(0.4**2 + 2**2))
    assert zone.ball.radius == pytest.approx(2.0396, abs=1e-4)


def test_build_sampling_zone_radius_rules(rng):
    assert C.build_sampling_zone([0, 0], [4, 0], rng, lam=0.75).ball.radius == 1.0
    assert C.build_sampling_zone([0, 0], [4, 0], rng, lam=1 - 1e-12).ball.radius < 1e-10
    with pytest.raises(Converged):
        C.build_sampling_zone([1, 1], [1, 1], rng)


def test_sampling_zone_invariants(rng):
    for _ in range(200):
        s, x = rng.random(3), rng.random(3)
        zone = C.build_sampling_zone(s, x, rng)
        b = np.linalg.norm(x - s)
        assert 0.5 < zone.lam < 1
        assert zone.ball.radius == pytest.approx((1 - zone.lam) * b)
        assert np.linalg.norm(zone.ball.center - s) + zone.ball.radius <= b * (1 + 1e-12)
        assert abs(zone.frame.axis.dot(zone.frame.ortho)) <= 1e-12


def test_score_extremes():
    assert C.score(0.0, 0.0) == 2.0
    assert C.score(1.0, math.pi / 2) == pytest.approx(0.0)
    assert C.score(1.0, -math.pi / 2) == pytest.approx(0.0)


def _grid_oracle(zone, grid, eps):
    """Enumerate the zone-fitted grid cell by cell and weight in-ball candidates."""
    n_d, n_a = grid
    lam = zone.lam
    d_lo = 2 * lam - 1
    theta = math.asin((1 - lam) / lam)
    s, axis, ortho, b = zone.frame.origin, zone.frame.axis, zone.frame.ortho, zone.frame.span
    weights = {}
    for i in range(n_d):
        delta = d_lo + (1 - d_lo) * (i + 0.5) / n_d
        for j in range(n_a):
            alpha = theta * (2 * (j + 0.5) / n_a - 1)
            p = s + delta * b * (math.cos(alpha) * axis + math.sin(alpha) * ortho)
            if math.dist(p, zone.ball.center) < zone.ball.radius:
                q = (1 - delta) + (1 - 2 * abs(alpha) / math.pi)
                weights[(i, j)] = math.exp(eps * q / 4)
    z = sum(weights.values())
    return {key: w / z for key, w in weights.items()}


def _cell_index(zone, delta, alpha, grid):
    d_lo, theta = 2 * zone.lam - 1, math.asin((1 - zone.lam) / zone.lam)
    i = np.rint((delta - d_lo) / (1 - d_lo) * grid[0] - 0.5).astype(int)
    j = np.rint((alpha / theta + 1) / 2 * grid[1] - 0.5).astype(int)
    return list(zip(i.tolist(), j.tolist()))


FIXED_ZONE = dict(s_cur=[0.2, 0.4], x=[0.5, 0.1], lam=0.6, ortho=[math.sqrt(0.5), math.sqrt(0.5)])


@pytest.mark.parametrize("eps", [1.0, 20.0])
def test_private_centroid_distribution(eps, rng):
    zone = C.build_sampling_zone(rng=rng, **FIXED_ZONE)
    grid, draws = (64, 64), 100_000
    oracle = _grid_oracle(zone, grid, eps)
    keys = list(oracle)
    p = np.array([oracle[key] for key in keys])
    _, delta, alpha = C.sample_private_centroids(zone, eps, draws, grid, rng)
    pos = {key: n for n, key in enumerate(keys)}
    cells = _cell_index(zone, delta, alpha, grid)
    assert set(cells) <= set(keys)
    observed = np.bincount([pos[c] for c in cells], minlength=p.size)
    tv = 0.5 * np.abs(observed / draws - p).sum()
    # an exact sampler's own TV at this sample size sets the reference
    floor = [0.5 * np.abs(rng.multinomial(draws, p) / draws - p).sum() for _ in range(40)]
    assert tv <= max(floor) * 1.05
    expected = p * draws
    big = expected >= 5
    obs = np.append(observed[big], observed[~big].sum())
    exp = np.append(expected[big], expected[~big].sum())
    if exp[-1] == 0:
        obs, exp = obs[:-1], exp[:-1]
    assert stats.chisquare(obs, exp).pvalue > 1e-4


def test_batched_draws_match_single_draws():
    zone = C.build_sampling_zone(rng=np.random.default_rng(0), **FIXED_ZONE)
    single = [C.sample_private_centroid(zone, 1.0, (64, 64), np.random.default_rng(s))[1:] for s in range(20)]
    batched = [C.sample_private_centroids(zone, 1.0, 1, (64, 64), np.random.default_rng(s)) for s in range(20)]
    assert single == [(float(b[1][0]), float(b[2][0])) for b in batched]


def test_private_centroid_lies_in_zone(rng):
    for _ in range(500):
        s, x = rng.random(2), rng.random(2)
        zone = C.build_sampling_zone(s, x, rng)
        p, delta, alpha = C.sample_private_centroid(zone, 0.5, (32, 32), rng)
        assert zone.ball.contains(p)
        assert np.linalg.norm(p - s) < np.linalg.norm(x - s)
        assert 0 < delta < 1 and -math.pi / 2 < alpha < math.pi / 2


def test_private_centroid_one_dim(rng):
    zone = C.build_sampling_zone([0.0], [1.0], rng, lam=0.7)
    p, delta, alpha = C.sample_private_centroid(zone, 1.0, (64, 64), rng)
    assert alpha == 0.0
    assert 0.4 < p[0] < 1.0


def test_grid_minimum_enforced(rng):
    zone = C.build_sampling_zone([0, 0], [1, 0], rng)
    with pytest.raises(C.ClusteringError):
        C.sample_private_centroid(zone, 1.0, (8, 64), rng)


def test_finalize_zero_noise_is_exact_mean():
    data = np.array([[0.0, 0.2], [0.4, 0.6], [1.0, 1.0]])
    out = C.finalize_laplace(data, [0, 0, 1], 2, math.inf, None)
    np.testing.assert_allclose(out, [[0.2, 0.4], [1.0, 1.0]])


def test_finalize_clamps_noisy_count(monkeypatch):
    data = np.full((10, 1), 0.05)
    monkeypatch.setattr(C, "laplace_sample", lambda scale, rng, size=None: np.full(size, -9.5))
    out = C.finalize_laplace(data, np.zeros(10, int), 1, 1.0, None)
    # divisor clamped to 1 -> sum 0.5, which stays inside the unit box
    np.testing.assert_allclose(out, [[0.5]])


def test_finalize_noise_scale(monkeypatch):
    seen = []

    def fake(scale, rng, size=None):
        seen.append(scale)
        return np.zeros(size)

    monkeypatch.setattr(C, "laplace_sample", fake)
    C.finalize_laplace(np.ones((3, 1)), [0, 0, 0], 1, 0.5, None)
    assert seen == [2.0]


def test_dp_noiseless_reduces_to_lloyd(iris, rng):
    for _ in range(10):
        init = C.sample_init(iris, 3, rng)
        ref = C.lloyd(iris, 3, init)
        res = C.dp_kmeans(iris, 3, "prior", 1.0, 1.0, C.DPConfig(noiseless=True), rng, init_centroids=init)
        np.testing.assert_array_equal(res.prenoise_centroids, ref.centroids)
        assert res.iterations == ref.iteration
        assert res.cost_trace == ref.cost_trace


def test_dp_one_point_per_cluster(rng):
    data = np.array([[0.1, 0.1], [0.9, 0.2], [0.4, 0.8]])
    res = C.dp_kmeans(data, 3, "prior", 0.5, 0.5, rng=rng)
    assert res.iterations == 1
    assert C.centroid_cost(data, res.prenoise_centroids) == 0.0


def test_dp_rejects_k_above_n(rng):
    with pytest.raises(C.ClusteringError):
        C.dp_kmeans(np.zeros((2, 2)), 3, rng=rng)


@pytest.mark.parametrize("strategy", ["posterior", "prior"])
def test_dp_run_invariants(strategy, iris, blobs):
    for data in (iris, blobs):
        for seed in range(15):
            rng = np.random.default_rng(seed)
            res = C.dp_kmeans(data, 3, strategy, 0.3, 0.2, rng=rng)
            assert res.converged
            assert all(y < x for x, y in zip(res.cost_trace, res.cost_trace[1:]))
            for rec in res.records:
                sampled = ~np.isnan(rec.private_dist)
                assert np.all(rec.private_dist[sampled] < rec.zone_radius[sampled])
                assert np.all(rec.reach[sampled] <= rec.zone_radius[sampled] * (1 + 1e-12))
                assert rec.in_ball.all()
                d, a = rec.delta[~np.isnan(rec.delta)], rec.alpha[~np.isnan(rec.alpha)]
                assert np.all((d > 0) & (d < 1))
                assert np.all(np.abs(a) < math.pi / 2)
            assert res.ledger.iterations == res.iterations
            assert all(len(b) == 3 for b in res.ledger.per_iteration)
            assert ledger_total(res.ledger) == pytest.approx(0.2 + res.iterations * 0.3, rel=1e-12)
            assert np.all((res.final_centroids >= 0) & (res.final_centroids <= 1))


def test_dp_one_dimensional(rng):
    data = np.concatenate([rng.normal(0.2, 0.03, 40), rng.normal(0.8, 0.03, 40)]).reshape(-1, 1)
    res = C.dp_kmeans(np.clip(data, 0, 1), 2, "posterior", 0.5, 0.5, rng=rng)
    assert res.converged
    assert all(y < x for x, y in zip(res.cost_trace, res.cost_trace[1:]))


def test_dp_with_lloyd_reference(iris, rng):
    res = C.dp_kmeans(iris, 3, "prior", 0.5, 0.5, rng=rng, with_lloyd=True)
    assert res.lloyd_reference is not None and res.lloyd_reference.converged


def test_strategy_aliases():
    assert C.Strategy.parse("past") is C.Strategy.POSTERIOR
    assert C.Strategy.parse("past_and_future") is C.Strategy.PRIOR
    with pytest.raises(C.ClusteringError):
        C.Strategy.parse("sideways")


def test_schedules():
    assert C.Schedule.uniform(4).budgets(1.0) == [0.25] * 4
    halving = C.Schedule.halving().budgets(1.0)
    assert halving[:3] == [0.5, 0.25, 0.125]
    assert halving[-1] >= 1e-3 and halving[-1] / 2 < 1e-3
    with pytest.raises(C.ClusteringError):
        C.Schedule.uniform(0)


def test_baseline_zero_noise_matches_lloyd_trace(iris, rng):
    init = C.sample_init(iris, 3, rng)
    ref = C.lloyd(iris, 3, init)
    res = C.baseline_laplace(iris, 3, C.Schedule.uniform(20), 1.0, rng, init_centroids=init, noise_multiplier=0)
    n = len(ref.cost_trace)
    assert res.cost_trace[:n] == ref.cost_trace
    assert all(c == ref.cost_trace[-1] for c in res.cost_trace[n:])
    np.testing.assert_array_equal(res.final_centroids, ref.centroids)


def test_baseline_ledger(iris, rng):
    res = C.baseline_laplace(iris, 3, C.Schedule.uniform(4), 1.0, rng)
    assert res.iterations == 4
    assert res.ledger.per_iteration == [[0.25] * 3] * 4
    assert res.epsilon_total == pytest.approx(1.0)
    assert np.all((res.final_centroids >= 0) & (res.final_centroids <= 1))
