import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rasp_evt.boxes import Box, Region
from rasp_evt.density import (
    Grid,
    boundary_cells,
    check_contraction_condition,
    closed_form_cell_masses,
    closed_form_density,
    closed_form_measure,
    closed_form_profile,
    empirical_density,
    measure_of_region,
    operator_iterates,
    perturbed_operator,
    stationary_density_series,
    truncation_depth,
    ulam_operator,
)
from rasp_evt.errors import BoundaryError, CapabilityError, ConfigError
from rasp_evt.maps import baker, contraction_1d, quad_affine
from rasp_evt.rasp import NoiseParams, sample_stationary_many

C0 = contraction_1d(0.5, 0.0)
BUILTINS = [C0, contraction_1d(0.5, 0.3), baker(0.2, 0.4, 0.5), quad_affine(0.5, 0.5, 0.5)]
# maps whose piece boundaries and images are dyadic, so the Ulam vector is exact
DYADIC = {id(C0), id(BUILTINS[3])}


def _node_tol(fmap):
    return 1e-6 if fmap.kind == "baker" else 0.0


# ------------------------------------------------------------- closed form
@pytest.mark.parametrize("x,expected", [(0.7, 0.5), (0.3, 1.0), (0.2, 1.5)])
def test_closed_form_examples(x, expected):
    assert closed_form_density(C0, 0.5, [x]) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("p", range(1, 8))
def test_closed_form_strata(p):
    # h = 0.5 p on (2^-p, 2^-p+1] for a = 0.5, eps = 0.5
    x = 0.75 * 2.0 ** (-p + 1)
    assert closed_form_density(C0, 0.5, [x]) == pytest.approx(0.5 * p, rel=1e-13)


def test_closed_form_boundary_is_undefined():
    with pytest.raises(BoundaryError):
        closed_form_density(C0, 0.5, [0.25])


def test_closed_form_equals_eps_off_image():
    q = BUILTINS[3]
    assert closed_form_density(q, 0.3, [0.3, 0.7]) == pytest.approx(0.3)


def test_closed_form_needs_affine_builtin():
    from rasp_evt.maps import PiecewiseMap, SmoothPiece

    g = PiecewiseMap("generic", {}, 1, (SmoothPiece(Box.open((0.0,), (1.0,)), lambda x: x / 2, lambda x: np.eye(1) / 2),))
    with pytest.raises(CapabilityError):
        closed_form_density(g, 0.5, [0.3])


def test_truncation_depth():
    K = truncation_depth(0.5, 1e-12)
    assert 0.5 ** (K + 1) <= 1e-12 < 0.5 ** K


@pytest.mark.parametrize(
    "fmap,eps,holds,lam",
    [(C0, 0.6, True, 2.0), (C0, 0.4, False, 2.0), (quad_affine(0.5, 0.5, 0.5), 0.8, True, 4.0)],
)
def test_contraction_condition(fmap, eps, holds, lam):
    res = check_contraction_condition(fmap, eps)
    assert res.holds is holds and res.lam == pytest.approx(lam)


def test_bounded_density_when_condition_holds():
    q = BUILTINS[3]
    eps = 0.8
    res = check_contraction_condition(q, eps)
    bound = eps / (1 - (1 - eps) * res.lam)
    masses, _ = closed_form_cell_masses(q, eps, 6)
    assert np.max(masses / Grid(2, 6).cell_measure) <= bound * (1 + 1e-12)


# ----------------------------------------------------------------- measure
def test_measure_examples():
    assert closed_form_measure(C0, 0.5, Box.open((0.29,), (0.31,))).value == pytest.approx(0.02, abs=1e-15)
    prof = closed_form_profile(C0, 0.5)
    assert measure_of_region(prof, Region.unit_cube(1)) == pytest.approx(1.0, abs=1e-12)
    assert measure_of_region(prof, Region.empty(1)) == 0.0


@pytest.mark.parametrize("fmap", BUILTINS, ids=lambda m: f"{m.kind}{m.params}")
@pytest.mark.parametrize("eps", [0.2, 0.5, 0.8])
def test_strata_sum_to_one(fmap, eps):
    masses, err = closed_form_cell_masses(fmap, eps, 3, node_tol=_node_tol(fmap))
    assert np.all(masses >= 0)
    assert masses.sum() == pytest.approx(1.0, abs=1e-9)
    assert err < 0.03


def test_baker_without_node_tolerance_hits_budget():
    with pytest.raises(CapabilityError):
        closed_form_cell_masses(baker(0.2, 0.4, 0.5), 0.5, 4, max_nodes=10_000)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.05, 0.95))
def test_measure_additive(a, b, eps):
    lo, hi = min(a, b), max(a, b)
    mid = (lo + hi) / 2
    whole = closed_form_measure(C0, eps, Box.open((lo,), (hi,))).value
    left = closed_form_measure(C0, eps, Box.open((lo,), (mid,))).value
    right = closed_form_measure(C0, eps, Box.open((mid,), (hi,))).value
    assert whole == pytest.approx(left + right, abs=1e-12)
    assert 0.0 <= whole <= 1.0 + 1e-12


# -------------------------------------------------------------------- Ulam
def test_ulam_g1():
    P = ulam_operator(C0, 1)
    np.testing.assert_array_equal(P.dense(), [[1.0, 0.0], [1.0, 0.0]])
    np.testing.assert_allclose(perturbed_operator(P, 0.5).dense(), [[0.75, 0.25], [0.75, 0.25]])


def test_ulam_g2_support():
    M = ulam_operator(C0, 2).dense()
    assert np.all(M[:, 2:] == 0.0)
    assert M[0, 0] == 1.0 and M[2, 1] == 1.0


@pytest.mark.parametrize("fmap", BUILTINS, ids=lambda m: f"{m.kind}{m.params}")
def test_ulam_row_stochastic(fmap):
    P = ulam_operator(fmap, 5 if fmap.dim == 1 else 3)
    assert np.allclose(P.row_sums(), 1.0, atol=1e-12)
    D = perturbed_operator(P, 0.3).dense()
    assert np.all((D >= 0) & (D <= 1 + 1e-15))
    assert np.allclose(D.sum(axis=1), 1.0, atol=1e-12)


def test_perturbed_limits():
    P = ulam_operator(C0, 3)
    np.testing.assert_allclose(perturbed_operator(P, 1e-15).dense(), P.dense(), atol=1e-14)
    R = perturbed_operator(P, 1.0).dense()
    np.testing.assert_allclose(R, np.full((8, 8), 1 / 8))
    with pytest.raises(ConfigError):
        perturbed_operator(P, 1.5)


def test_ulam_triplets_export():
    P = ulam_operator(C0, 2)
    trip = list(P.triplets())
    assert len(trip) == P.matrix.nnz
    assert all(0 <= i < 4 and 0 <= j < 4 and v > 0 for i, j, v in trip)


def test_operator_iterates_examples():
    P = ulam_operator(C0, 6)
    assert operator_iterates(P, 0.5, 1.0, 0).gap == 0.0
    assert operator_iterates(P, 0.5, 1.0, 5).gap < 1e-12
    one = operator_iterates(P, 0.5, np.linspace(0.5, 1.5, 64), 1)
    expected = perturbed_operator(P, 0.5).apply_density(np.linspace(0.5, 1.5, 64))
    np.testing.assert_allclose(one.iterated, expected, atol=1e-14)
    assert one.gap < 1e-13


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 12), st.floats(0.05, 0.95), st.integers(0, 2**32 - 1))
def test_iterate_identity_property(g, n, eps, seed):
    psi = np.random.default_rng(seed).random(2 ** g) * 2
    assert operator_iterates(ulam_operator(C0, g), eps, psi, n).gap < 1e-12


def test_series_g1():
    h = stationary_density_series(ulam_operator(C0, 1), 0.5)
    np.testing.assert_allclose(h.values, [1.5, 0.5], rtol=1e-12)
    masses, _ = closed_form_cell_masses(C0, 0.5, 1)
    assert masses[0] == pytest.approx(0.75, abs=1e-14)
    assert h.info["residual_l1"] < 1e-13


def test_series_g12_matches_closed_form():
    g = 12
    h = stationary_density_series(ulam_operator(C0, g), 0.5)
    cf = closed_form_profile(C0, 0.5).cell_averages(g)
    edge = boundary_cells(C0, g, 64)
    rel = np.abs(h.values - cf) / cf
    assert np.max(rel[~edge]) < 1e-2


@pytest.mark.parametrize("fmap", BUILTINS, ids=lambda m: f"{m.kind}{m.params}")
@pytest.mark.parametrize("eps", [0.2, 0.5, 0.8])
def test_three_way_agreement(fmap, eps):
    g = 8 if fmap.dim == 1 else 4
    grid = Grid(fmap.dim, g)
    masses, err = closed_form_cell_masses(fmap, eps, g, node_tol=_node_tol(fmap))
    cf = masses / grid.cell_measure
    ulam = stationary_density_series(ulam_operator(fmap, g), eps)
    l1 = np.sum(np.abs(ulam.values - cf)) * grid.cell_measure
    assert l1 < (1e-12 if id(fmap) in DYADIC else 0.05 + err)
    X = sample_stationary_many(fmap, NoiseParams(eps), 200_000, seed=1)
    hist = empirical_density(X, g)
    ok = hist.stderr > 0
    z = np.abs(hist.values - cf)[ok] / hist.stderr[ok]
    # per-cell 3 sigma with a Bonferroni allowance over 256 cells
    assert np.max(z) < 4.5
    assert np.mean(z < 3) > 0.98


# --------------------------------------------------------------- histogram
def test_empirical_density_single_sample():
    h = empirical_density(np.array([[0.3]]), 3)
    assert h.values[2] == 8.0 and h.values.sum() == 8.0


def test_empirical_density_uniform_is_flat():
    X = sample_stationary_many(C0, NoiseParams(0.5), 100_000, burn_in=0, seed=4)
    h = empirical_density(X, 4)
    assert np.all(np.abs(h.values - 1.0) < 4 * h.stderr)
    assert h.integral() == pytest.approx(1.0)


def test_empirical_density_empty():
    with pytest.raises(ConfigError):
        empirical_density(np.empty((0, 1)), 3)


def test_profile_rows_and_measure():
    h = stationary_density_series(ulam_operator(C0, 3), 0.5)
    rows = h.rows()
    assert len(rows) == 8 and rows[0][0] == 1 / 16
    assert measure_of_region(h, Box.open((0.0,), (0.5,))) == pytest.approx(0.75, abs=1e-12)
    assert measure_of_region(h, Region.unit_cube(1)) == pytest.approx(1.0, abs=1e-12)
