import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rasp_evt.boxes import Box, Region, sup_ball
from rasp_evt.density import closed_form_measure
from rasp_evt.diagnostics import (
    Constant,
    Indicator,
    cluster_probability_ratio,
    cluster_return_sum,
    correlation_estimate,
    correlation_table,
    dprime_sum,
    dprime_sum_analytic,
    mixing_gap_estimate,
    return_prob_analytic,
    return_prob_mc,
    write_table,
)
from rasp_evt.errors import AssumptionViolated, ConfigError, LevelError
from rasp_evt.evt import DistToPoint, level_sequence_analytic, level_sequence_exact
from rasp_evt.maps import baker, contraction_1d, quad_affine

C0 = contraction_1d(0.5, 0.0)
C3 = contraction_1d(0.5, 0.3)
STRIP = Indicator(Region(1, [Box.open((0.25,), (0.5,))]))


def _u(r, z=0.6):
    return Region(1, [sup_ball([z], r)])


# -------------------------------------------------------------- correlation
def test_correlation_lag_zero_rejected():
    with pytest.raises(ConfigError):
        correlation_estimate(C0, 0.5, STRIP, STRIP, 0, 100)


def test_correlation_unbounded_phi_rejected():
    with pytest.raises(ConfigError):
        correlation_estimate(C0, 0.5, lambda X: X[:, 0], STRIP, 1, 100)


def test_correlation_constants_are_uncorrelated():
    for r in correlation_table(C0, 0.5, Constant(1.0), Constant(1.0), [1, 5, 10], 1000, seed=1):
        assert r.estimate == 0.0


def test_correlation_example_lag_ten():
    r = correlation_estimate(C0, 0.5, STRIP, STRIP, 10, 1_000_000, seed=2)
    mu = closed_form_measure(C0, 0.5, Box.open((0.25,), (0.5,))).value
    assert r.bound == pytest.approx(2 * 0.5 ** 10 * mu, rel=1e-12)
    assert abs(r.estimate) <= r.bound + 4 * r.stderr


@pytest.mark.parametrize("fmap", [C0, baker(0.2, 0.4, 0.5), quad_affine(0.5, 0.5, 0.5)], ids=lambda m: m.kind)
@pytest.mark.parametrize("eps", [0.2, 0.5, 0.8])
def test_correlation_bound_all_lags(fmap, eps):
    lo = (0.25,) + (0.0,) * (fmap.dim - 1)
    hi = (0.5,) + (1.0,) * (fmap.dim - 1)
    A = Indicator(Region(fmap.dim, [Box.open(lo, hi)]))
    for r in correlation_table(fmap, eps, A, A, range(1, 31), 50_000, seed=3):
        assert abs(r.estimate) <= r.bound + 4 * r.stderr


def test_correlation_worker_invariance():
    a = correlation_table(C0, 0.5, STRIP, STRIP, [1, 2, 3], 3000, seed=4, workers=1)
    b = correlation_table(C0, 0.5, STRIP, STRIP, [1, 2, 3], 3000, seed=4, workers=3)
    assert a == b


# -------------------------------------------------------------- mixing gaps
def test_mixing_gap_large_t():
    g = mixing_gap_estimate(C3, 0.5, _u(0.01), 1, 200, 3, 400_000, seed=5)
    assert g.bound < 1e-60
    assert abs(g.estimate) <= 4 * g.stderr


def test_mixing_gap_empty_window():
    g = mixing_gap_estimate(C3, 0.5, _u(0.01), 1, 5, 0, 10_000, seed=6)
    assert g.gap == 0.0


def test_cluster_event_probability():
    eps, U = 0.5, _u(0.02)
    g = mixing_gap_estimate(C3, eps, U, 1, 3, 2, 400_000, seed=7)
    ref = eps * closed_form_measure(C3, eps, U).value * (1 - U.measure())
    assert abs(g.p_event - ref) < 3 * g.p_event_stderr


def test_mixing_gap_decreasing_in_t():
    gaps = [mixing_gap_estimate(C3, 0.5, _u(0.02), 0, t, 3, 200_000, seed=8) for t in (1, 4, 12)]
    for g in gaps:
        assert g.gap <= g.bound + 4 * g.stderr
    assert gaps[0].bound > gaps[1].bound > gaps[2].bound


def test_mixing_gap_small_budget_warns():
    with pytest.warns(RuntimeWarning):
        g = mixing_gap_estimate(C3, 0.5, _u(1e-4), 1, 2, 1, 1000, seed=9)
    assert g.stderr >= math.sqrt(closed_form_measure(C3, 0.5, _u(1e-4)).value / 1000)


def test_mixing_gap_argument_checks():
    for kw in (dict(q=2, t=1, ell=1), dict(q=1, t=0, ell=1), dict(q=1, t=1, ell=-1)):
        with pytest.raises(ConfigError):
            mixing_gap_estimate(C3, 0.5, _u(0.01), kw["q"], kw["t"], kw["ell"], 100)


# ------------------------------------------------------ return probabilities
def test_return_prob_examples():
    assert return_prob_analytic(C0, 0.5, [0.3], 0.01, 1).value == pytest.approx(0.0002, abs=1e-15)
    mu = closed_form_measure(C0, 0.5, sup_ball([0.3], 0.01)).value
    for j in (2, 3, 10):
        v = return_prob_analytic(C0, 0.5, [0.3], 0.01, j).value
        assert v == pytest.approx(0.0004, abs=1e-15)
        assert abs(v - mu ** 2) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.floats(0.51, 0.99), st.floats(1e-4, 5e-3), st.floats(0.1, 0.9), st.integers(1, 12))
def test_return_prob_capped(z, r, eps, j):
    # z in the top stratum (p = 0)
    if z - r <= 0.5 or z + r >= 1.0:
        return
    mu = closed_form_measure(C0, eps, sup_ball([z], r)).value
    a = return_prob_analytic(C0, eps, [z], r, j).value
    b = return_prob_analytic(C0, eps, [z], r, j + 1).value
    assert a <= b <= mu ** 2 * (1 + 1e-12)


def test_return_prob_pp1_equals_mu_squared():
    # z = 0.15 lies in stratum p = 2
    mu = closed_form_measure(C0, 0.5, sup_ball([0.15], 0.005)).value
    assert return_prob_analytic(C0, 0.5, [0.15], 0.005, 3).value == pytest.approx(mu ** 2, abs=1e-12)
    assert return_prob_analytic(C0, 0.5, [0.15], 0.005, 2).value < mu ** 2


def test_return_prob_errors():
    with pytest.raises(LevelError):
        return_prob_analytic(C0, 0.5, [0.26], 0.02, 1)
    with pytest.raises(ConfigError):
        return_prob_analytic(C0, 0.5, [0.3], 0.01, 0)


def test_return_prob_mc_agrees():
    mc = return_prob_mc(C0, 0.5, [0.3], 0.01, [1, 2, 5], 2_000_000, seed=10)
    for r in mc:
        exact = return_prob_analytic(C0, 0.5, [0.3], 0.01, r.j).value
        assert abs(r.value - exact) < 3 * r.stderr + 1e-12


# ----------------------------------------------------------- return sums
def test_dprime_analytic_example():
    s = dprime_sum_analytic(C0, 0.5, [0.3], 0.01, 100, 10)
    assert s.value == pytest.approx(0.38, abs=1e-12) and s.terms == 10


def test_dprime_mc_matches_analytic():
    obs = DistToPoint([0.3])
    s = dprime_sum(C0, 0.5, obs, -math.log(0.01), 100, 10, 200_000, seed=11)
    assert abs(s.value - 0.38) < 3 * s.stderr


def test_dprime_doubling_k_reduces_sum():
    a = dprime_sum_analytic(C0, 0.5, [0.3], 0.01, 100, 10)
    b = dprime_sum_analytic(C0, 0.5, [0.3], 0.01, 100, 20)
    assert b.value < a.value


def test_dprime_trend_decreasing():
    vals = []
    for n in (100, 1000, 10_000):
        lev = level_sequence_analytic(C0, 0.5, [0.3], n, 1.0)
        vals.append(dprime_sum_analytic(C0, 0.5, [0.3], math.exp(-lev.u_n), n, math.sqrt(n)).value)
    assert vals[0] > vals[1] > vals[2] and vals[2] < 0.05
    with pytest.raises(ConfigError):
        dprime_sum_analytic(C0, 0.5, [0.3], 0.01, 100, 1.5)


def test_cluster_sum_trend_and_edge_cases():
    vals = []
    obs = DistToPoint([0.6])
    for n in (100, 1000, 10_000):
        U = obs.region(level_sequence_exact(C3, 0.5, obs, n, 1.0).u_n)
        vals.append(cluster_return_sum(C3, 0.5, U, n, math.sqrt(n), 20_000, seed=12))
    assert vals[0].value > vals[1].value > vals[2].value
    assert vals[2].value < 0.05
    assert vals[1].terms == int(1000 / math.sqrt(1000)) - 2
    assert cluster_return_sum(C3, 0.5, Region.empty(1), 100, 10, 100).value == 0.0
    with pytest.raises(AssumptionViolated):
        cluster_return_sum(C3, 0.5, _u(0.01, z=0.3), 100, 10, 100)


def test_cluster_ratio():
    eps, U = 0.5, _u(0.01)
    c = cluster_probability_ratio(C3, eps, U, 400_000, seed=13)
    assert c.reference == pytest.approx(eps * (1 - 0.02))
    assert abs(c.ratio - c.reference) < 3 * c.stderr


def test_write_table(tmp_path):
    p = tmp_path / "t.csv"
    write_table(p, [("correlation", "lag=1", 0.1, 0.01, 0.2)], "# config_hash=x seed=0")
    lines = p.read_text().splitlines()
    assert lines[0].startswith("# config_hash") and lines[1] == "quantity,parameters,estimate,stderr,reference"
    assert len(lines) == 3
