import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from rasp_evt.boxes import Region, sup_ball
from rasp_evt.errors import AssumptionViolated, BudgetError, ConfigError, EstimateUndefined, LevelError
from rasp_evt.evt import (
    BlockResults,
    DistToOrbit,
    DistToPoint,
    attractor_orbit,
    block_maxima,
    ecdf_table,
    exceedance_rate_check,
    extremal_index_analytic,
    extremal_index_empirical,
    gumbel_cdf,
    is_forward_invariant,
    ks_distance,
    level_sequence_analytic,
    level_sequence_empirical,
    level_sequence_exact,
    observable_eval,
    run_evt,
)
from rasp_evt.maps import contraction_1d, quad_affine
from rasp_evt.rasp import NoiseParams, sample_stationary_many

C0 = contraction_1d(0.5, 0.0)
C3 = contraction_1d(0.5, 0.3)
Q = quad_affine(0.5, 0.5, 0.5)


# -------------------------------------------------------------- observables
def test_observable_examples():
    assert observable_eval(DistToPoint([0.5]), [0.5]) == math.inf
    assert observable_eval(DistToPoint([0.3]), [0.4]) == pytest.approx(-math.log(0.1))
    assert observable_eval(DistToOrbit([[0.2], [0.6]]), [0.55]) == pytest.approx(2.995732, abs=1e-6)


@settings(max_examples=100)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0.5, 8.0))
def test_exceedance_set_is_ball(x, y, u):
    obs = DistToPoint([0.4, 0.6])
    p = [x, y]
    assert (observable_eval(obs, p) > u) == sup_ball([0.4, 0.6], math.exp(-u)).contains(p)
    assert (observable_eval(obs, p) > u) == obs.region(u).contains(p)


def test_vectorised_observable_matches_scalar():
    obs = DistToOrbit([[0.2, 0.4], [0.6, 0.2]])
    X = np.random.default_rng(0).random((50, 2))
    np.testing.assert_allclose(obs(X), [observable_eval(obs, x) for x in X])


# ------------------------------------------------------------------- levels
def test_analytic_level_examples():
    lev = level_sequence_analytic(C0, 0.5, [0.3], 100)
    assert lev.a_n == 1 and lev.b_n == pytest.approx(math.log(200), abs=1e-12)
    assert lev.u_n == lev.b_n
    q = level_sequence_analytic(Q, 0.5, [0.3, 0.7], 10_000)
    assert q.b_n == pytest.approx(math.log(2) + 0.5 * math.log(5000), abs=1e-12)
    # the formula gives 4.95174; a quoted rounding of 4.9520 is 2.6e-4 away
    assert q.b_n == pytest.approx(4.95174, abs=1e-5)


@pytest.mark.parametrize("n", [100, 1000, 10_000])
@pytest.mark.parametrize("tau", [0.5, 1.0, 2.0])
def test_analytic_level_ball_identity(n, tau):
    lev = level_sequence_analytic(C0, 0.5, [0.3], n, tau)
    # m(B(z, e^{-b_n})) n h(z) = 1
    assert (2 * math.exp(-lev.b_n)) * n * 1.0 == pytest.approx(1.0, abs=1e-12)
    assert lev.threshold(-math.log(tau)) == lev.u_n


def test_analytic_level_increasing_in_n():
    u = [level_sequence_analytic(C0, 0.5, [0.3], n, y=0.7).u_n for n in (100, 200, 1000, 5000)]
    assert u == sorted(u)


def test_analytic_level_errors():
    with pytest.raises(LevelError):
        level_sequence_analytic(C0, 0.5, [0.26], 10)  # ball leaves the stratum
    with pytest.raises(LevelError):
        level_sequence_analytic(C0, 0.5, [0.999], 10)  # ball leaves the domain
    with pytest.raises(ConfigError):
        level_sequence_analytic(C0, 0.5, [0.3], 100, tau=0.0)


def test_exact_levels_match_analytic_inside_stratum():
    a = level_sequence_analytic(C0, 0.5, [0.3], 1000, 1.0)
    e = level_sequence_exact(C0, 0.5, DistToPoint([0.3]), 1000, 1.0)
    assert e.u_n == pytest.approx(a.u_n, abs=1e-12)


def test_exact_levels_on_attractor():
    obs = DistToPoint([0.6])
    lev = level_sequence_exact(C3, 0.5, obs, 1000, 1.0)
    from rasp_evt.density import closed_form_measure

    assert 1000 * closed_form_measure(C3, 0.5, obs.region(lev.u_n)).value == pytest.approx(1.0, abs=1e-10)


def test_empirical_level_quantile():
    obs = DistToPoint([0.3])
    # tau = n/2 gives the median; tau = n would give the minimum
    lev = level_sequence_empirical(C0, NoiseParams(0.5), obs, 100, 50, 20_000, seed=3)
    X = sample_stationary_many(C0, NoiseParams(0.5), 20_000, None, 3)
    assert lev.u_n == pytest.approx(np.median(obs(X)))
    with pytest.raises(BudgetError):
        level_sequence_empirical(C0, NoiseParams(0.5), obs, 1000, 1.0, 5000)
    with pytest.raises(ConfigError):
        level_sequence_empirical(C0, NoiseParams(0.5), obs, 100, 0.0, 5000)


def test_empirical_level_matches_analytic():
    obs = DistToPoint([0.3])
    a = level_sequence_analytic(C0, 0.5, [0.3], 100, 1.0)
    e = level_sequence_empirical(C0, NoiseParams(0.5), obs, 100, 1.0, 200_000, seed=1)
    # quantile sampling error of log r: sqrt(p(1-p)/N) / (2 r h) relative to r
    se = math.sqrt(0.01 * 0.99 / 200_000) / 0.01
    assert abs(e.u_n - a.u_n) < 4 * se


# ------------------------------------------------------------- block maxima
def test_block_size_one_is_y0():
    obs = DistToPoint([0.3])
    res = block_maxima(C0, NoiseParams(0.5), obs, 1, 5000, seed=2)
    X = sample_stationary_many(C0, NoiseParams(0.5), 5000, None, 2)
    np.testing.assert_array_equal(res.maxima, obs(X))


def test_nested_blocks_monotone():
    obs = DistToPoint([0.3])
    a = block_maxima(C0, NoiseParams(0.5), obs, 20, 200, seed=5, keep_paths=True)
    b = block_maxima(C0, NoiseParams(0.5), obs, 40, 200, seed=5, keep_paths=True)
    np.testing.assert_array_equal(b.paths[:, :20], a.paths)
    assert np.all(b.maxima >= a.maxima)


def test_block_maxima_worker_invariance():
    obs = DistToPoint([0.3])
    kw = dict(seed=9, thresholds=[3.0, 4.0])
    a = block_maxima(C0, NoiseParams(0.5), obs, 50, 300, workers=1, **kw)
    b = block_maxima(C0, NoiseParams(0.5), obs, 50, 300, workers=3, chunk=64, **kw)
    np.testing.assert_array_equal(a.maxima, b.maxima)
    np.testing.assert_array_equal(a.exceedances, b.exceedances)
    np.testing.assert_array_equal(a.clusters, b.clusters)


def test_slice_mode_and_bad_mode():
    obs = DistToPoint([0.3])
    res = block_maxima(C0, NoiseParams(0.5), obs, 10, 30, seed=1, mode="slice", keep_paths=True)
    assert res.maxima.shape == (30,) and res.paths.shape == (30, 10)
    np.testing.assert_array_equal(res.maxima, res.paths.max(axis=1))
    with pytest.raises(ConfigError):
        block_maxima(C0, NoiseParams(0.5), obs, 10, 3, mode="other")
    with pytest.raises(ConfigError):
        block_maxima(C0, NoiseParams(0.5), obs, 10, 0)


def test_cluster_counting():
    # two blocks of length 6 at threshold 0.5
    paths = np.array([[1, 1, 0, 1, 0, 0], [0, 1, 0, 0, 1, 1]], dtype=float)
    from rasp_evt.evt import _BlockFold

    fold = _BlockFold(2, 6, np.array([0.5]), False)
    for t in range(6):
        fold.add(t, paths[:, t])
    maxima, exc, ends, _ = fold.close()
    assert exc[:, 0].tolist() == [3, 3] and ends[:, 0].tolist() == [2, 2]


# ------------------------------------------------------------------- Gumbel
def test_gumbel_cdf_examples():
    assert gumbel_cdf(0.0) == pytest.approx(math.exp(-1))
    assert gumbel_cdf(-math.log(2.0)) == pytest.approx(math.exp(-2))
    assert gumbel_cdf(50.0) == pytest.approx(1.0)


def test_ks_examples():
    assert ks_distance([0.0]) == pytest.approx(max(math.exp(-1), 1 - math.exp(-1)))
    for m in (10, 100, 1000):
        q = -np.log(-np.log((np.arange(1, m + 1) - 0.5) / m))
        assert ks_distance(q) <= 0.5 / m + 1e-12
    assert ks_distance([1.0, 2.0, 3.0], lambda y: np.full_like(np.asarray(y, dtype=float), 0.5)) >= 0.5
    with pytest.raises(ConfigError):
        ks_distance([])


@settings(max_examples=50)
@given(st.lists(st.floats(-5, 10), min_size=1, max_size=200))
def test_ks_matches_scipy(xs):
    assert ks_distance(xs) == pytest.approx(stats.kstest(xs, lambda y: np.exp(-np.exp(-np.asarray(y)))).statistic, abs=1e-12)


def test_ecdf_table_monotone():
    rows = ecdf_table(np.random.default_rng(0).gumbel(size=500))
    F = [r[1] for r in rows]
    G = [r[2] for r in rows]
    assert F == sorted(F) and G == sorted(G)
    assert all(0 <= v <= 1 for v in F + G)


def test_ks_decreases_with_blocks():
    lev = level_sequence_analytic(C0, 0.5, [0.3], 100, 1.0)
    obs = DistToPoint([0.3])
    res = block_maxima(C0, NoiseParams(0.5), obs, 100, 10_000, seed=3)
    ks = [ks_distance(lev.rescale(res.maxima[:b])) for b in (100, 1000, 10_000)]
    assert ks[0] > ks[2] and ks[1] > ks[2]


# ---------------------------------------------------------- exceedance rate
@pytest.mark.parametrize("tau", [1.0, 2.0])
def test_exceedance_rate_exact_branch(tau):
    lev = level_sequence_analytic(C0, 0.5, [0.3], 100, tau)
    chk = exceedance_rate_check(C0, NoiseParams(0.5), DistToPoint([0.3]), lev.u_n, 100, 100_000, seed=1)
    assert chk.exact == pytest.approx(tau, abs=1e-12)
    assert abs(chk.estimate - chk.exact) < 3 * chk.stderr


def test_exceedance_rate_rejects_infinite_threshold():
    with pytest.raises(ConfigError):
        exceedance_rate_check(C0, NoiseParams(0.5), DistToPoint([0.3]), math.inf, 100, 10)


# ---------------------------------------------------------------- attractor
def test_attractor_fixed_point():
    orbits = attractor_orbit(C3)
    assert len(orbits) == 1 and orbits[0].period == 1
    assert orbits[0].points[0, 0] == pytest.approx(0.6, abs=1e-12)
    assert orbits[0].margin >= 1e-11


def test_attractor_on_singular_set_is_flagged():
    with pytest.raises(AssumptionViolated):
        attractor_orbit(C0)


def test_attractor_period_two():
    f = contraction_1d(0.5, 0.8)
    orbits = attractor_orbit(f)
    assert orbits[0].period == 2
    w = orbits[0].points[0]
    assert abs(f.evaluate(f.evaluate(w))[0] - w[0]) < 1e-12
    np.testing.assert_allclose(sorted(orbits[0].points[:, 0]), [4 / 15, 14 / 15], atol=1e-12)


def test_attractor_quad_orbits_verified():
    orbits = attractor_orbit(Q)
    assert orbits
    for o in orbits:
        w = o.points[0]
        x = w.copy()
        for _ in range(o.period):
            x = Q.evaluate(x)
        assert np.max(np.abs(x - w)) < 1e-12
        assert o.margin >= 1e-11
    pts = {tuple(np.round(p, 12)) for p in orbits[0].points}
    assert pts == {(0.2, 0.4), (0.6, 0.2), (0.8, 0.6), (0.4, 0.8)}


def test_orbit_union_forward_invariant():
    o = attractor_orbit(Q)[0]
    obs = DistToOrbit(o.points)
    for r in (0.05, 0.01):
        assert is_forward_invariant(Q, obs.region_radius(r))
    assert is_forward_invariant(C3, DistToPoint([0.6]).region_radius(0.01))


# ------------------------------------------------------------ extremal index
def test_extremal_index_analytic_examples():
    assert extremal_index_analytic(0.5, 0.0) == 0.5
    assert extremal_index_analytic(0.5, 0.01) == pytest.approx(0.495)
    assert extremal_index_analytic(0.2, 0.1) == pytest.approx(0.18)
    assert extremal_index_analytic(0.3, Region(1, [sup_ball([0.6], 0.05)])) == pytest.approx(0.27)


def _results(exc, clusters, n):
    exc = np.asarray(exc)[:, None]
    return BlockResults(n, np.zeros(len(exc)), np.array([1.0]), exc, np.asarray(clusters)[:, None], 0, "fresh")


def test_extremal_index_single_giant_cluster():
    n = 50
    res = _results([n, 0, n, 0], [1, 0, 1, 0], n)
    est = extremal_index_empirical(res, 1.0)
    assert est.theta_hat_runs == pytest.approx(1 / n)


def test_extremal_index_undefined():
    with pytest.raises(EstimateUndefined):
        extremal_index_empirical(_results([0, 0], [0, 0], 10), 1.0)
    with pytest.raises(EstimateUndefined):
        extremal_index_empirical(_results([1, 2], [1, 1], 10), 1.0)
    with pytest.raises(ConfigError):
        extremal_index_empirical(_results([1, 0], [1, 0], 10), 2.0)


def test_extremal_index_off_attractor_is_one():
    lev = level_sequence_analytic(C0, 0.5, [0.3], 1000, 1.0)
    rep = run_evt(C0, NoiseParams(0.5), DistToPoint([0.3]), lev, 4000, seed=11)
    t = rep.theta
    assert abs(t.theta_hat_logp - 1) < 4 * t.logp_stderr + 0.02
    assert abs(t.theta_hat_runs - 1) < 4 * t.runs_stderr + 0.02
    assert rep.theta_analytic is None


def test_extremal_index_on_attractor_is_eps():
    eps = 0.5
    obs = DistToOrbit(attractor_orbit(C3)[0].points)
    lev = level_sequence_exact(C3, eps, obs, 1000, 1.0)
    rep = run_evt(C3, NoiseParams(eps), obs, lev, 4000, seed=12)
    t = rep.theta
    assert abs(t.theta_hat_logp - eps) < 0.05 + 3 * t.logp_stderr
    assert abs(t.theta_hat_runs - eps) < 0.05 + 3 * t.runs_stderr
    # the two estimators agree within joint 3 sigma
    assert abs(t.theta_hat_logp - t.theta_hat_runs) < 3 * math.hypot(t.logp_stderr, t.runs_stderr)
    assert rep.theta_analytic == pytest.approx(eps, abs=1e-3)


@pytest.mark.parametrize("tau", [0.5, 1.0, 2.0])
def test_no_exceedance_probability_on_attractor(tau):
    eps = 0.5
    obs = DistToPoint([0.6])
    lev = level_sequence_exact(C3, eps, obs, 1000, tau)
    rep = run_evt(C3, NoiseParams(eps), obs, lev, 3000, seed=13)
    assert abs(rep.p_no_exceedance - math.exp(-eps * tau)) < 3 * rep.p_no_exceedance_stderr + 0.01


def test_report_serialisation(tmp_path):
    lev = level_sequence_analytic(C0, 0.5, [0.3], 100, 1.0)
    rep = run_evt(C0, NoiseParams(0.5), DistToPoint([0.3]), lev, 200, seed=1, rate_budget=1000)
    data = rep.scalars()
    assert 0 <= data["p_no_exceedance"] <= 1 and data["level"]["u_n"] == lev.u_n
    rep.write(tmp_path, "# header")
    assert (tmp_path / "maxima.csv").read_text().startswith("# header\nblock_index,M_n,rescaled")
    assert len(rep.maxima_rows()) == 200
