"""The ten acceptance criteria as callable checks.

Each ``criterion_k`` returns a :class:`CriterionResult` listing its
individual comparisons.  ``quick=True`` divides Monte Carlo budgets by ten
and widens the fixed (non-stderr) tolerances accordingly; runtime limits are
only enforced at full scale.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .boxes import Box, Region
from .density import (
    Grid,
    boundary_cells,
    closed_form_cell_masses,
    closed_form_density,
    closed_form_measure,
    empirical_density,
    operator_iterates,
    stationary_density_series,
    ulam_operator,
)
from .diagnostics import (
    Indicator,
    cluster_probability_ratio,
    cluster_return_sum,
    correlation_table,
    dprime_sum,
    dprime_sum_analytic,
    return_prob_analytic,
    return_prob_mc,
)
from .evt import (
    DistToOrbit,
    DistToPoint,
    attractor_orbit,
    block_maxima,
    exceedance_rate_check,
    extremal_index_empirical,
    is_forward_invariant,
    ks_distance,
    level_sequence_analytic,
    level_sequence_exact,
)
from .maps import baker, contraction_1d, quad_affine
from .rasp import NoiseParams, sample_stationary_many


@dataclass
class Check:
    label: str
    ok: bool
    detail: str = ""


@dataclass
class CriterionResult:
    number: int
    name: str
    checks: list = field(default_factory=list)
    seconds: float = 0.0
    limit: Optional[float] = None

    @property
    def passed(self) -> bool:
        return all(c.ok for c in self.checks)

    def failures(self) -> list:
        return [c for c in self.checks if not c.ok]

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        bad = self.failures()
        tail = f"{len(self.checks)} checks" if not bad else f"{len(bad)}/{len(self.checks)} failed: {bad[0].label} {bad[0].detail}"
        return f"{status}  {self.number:>2}  {self.name:<34} {self.seconds:7.1f} s  {tail}"


def _scale(quick: bool, full: int) -> int:
    return max(full // 10, 1) if quick else full


class _Recorder:
    def __init__(self, number: int, name: str, limit: Optional[float], quick: bool):
        self.result = CriterionResult(number, name, limit=limit)
        self.quick = quick
        self._t0 = time.perf_counter()

    def check(self, label: str, ok: bool, detail: str = ""):
        self.result.checks.append(Check(label, bool(ok), detail))

    def close(self) -> CriterionResult:
        r = self.result
        r.seconds = time.perf_counter() - self._t0
        if r.limit is not None and not self.quick:
            self.check("runtime", r.seconds < r.limit, f"{r.seconds:.1f} s (limit {r.limit:.0f} s)")
        return r


def builtin_maps() -> dict:
    """The three builtin maps at the parameters used throughout the checks."""
    return {
        "contraction_1d": contraction_1d(0.5, 0.0),
        "baker": baker(0.2, 0.4, 0.5),
        "quad_affine": quad_affine(0.5, 0.5, 0.5),
    }


# --------------------------------------------------------------------- 1
def criterion_1(seed: int = 0, quick: bool = False, workers: int = 1) -> CriterionResult:
    rec = _Recorder(1, "density three-way agreement", 120.0, quick)
    f, eps = contraction_1d(0.5, 0.0), 0.5
    worst = 0.0
    for p in range(1, 41):
        x = 0.75 * 2.0 ** (-p + 1)
        worst = max(worst, abs(closed_form_density(f, eps, x) - 0.5 * p) / p)
    rec.check("closed form h = 0.5 p", worst <= 1e-12, f"max relative deviation {worst:.2e}")

    g = 12
    masses, _ = closed_form_cell_masses(f, eps, g)
    cf = masses / Grid(1, g).cell_measure
    ulam = stationary_density_series(ulam_operator(f, g), eps, 1e-13).values
    ok = ~boundary_cells(f, g, 64)
    rel = float(np.max(np.abs(ulam[ok] - cf[ok]) / cf[ok]))
    rec.check("Ulam g=12 sup relative error", rel < 1e-2, f"{rel:.2e} over {int(ok.sum())} cells")

    N = _scale(quick, 10_000_000)
    hist_level = 4
    X = sample_stationary_many(f, NoiseParams(eps), N, seed=seed, workers=workers)
    hist = empirical_density(X, hist_level)
    ref, _ = closed_form_cell_masses(f, eps, hist_level)
    ref = ref / hist.grid.cell_measure
    z = np.abs(hist.values - ref) / hist.stderr
    rec.check(f"histogram N={N} within 3 stderr", np.all(z <= 3.0), f"max |z| = {z.max():.2f} over {len(z)} cells")
    return rec.close()


# --------------------------------------------------------------------- 2
def criterion_2(seed: int = 0, quick: bool = False, workers: int = 1) -> CriterionResult:
    rec = _Recorder(2, "iterate formula on Ulam matrices", 30.0, quick)
    worst = 0.0
    for name, f in builtin_maps().items():
        for g in (4, 6, 8):
            P = ulam_operator(f, g)
            centers = P.grid.centers()
            psis = (np.ones(P.n_cells), 1.0 + 0.5 * np.sin(2 * np.pi * centers.sum(axis=1)))
            for eps in (0.2, 0.5, 0.8):
                for n in (1, 5, 20):
                    for psi in psis:
                        worst = max(worst, operator_iterates(P, eps, psi, n).gap)
    rec.check("max gap < 1e-10", worst < 1e-10, f"max gap {worst:.2e}")
    return rec.close()


# --------------------------------------------------------------------- 3
def criterion_3(seed: int = 0, quick: bool = False, workers: int = 1) -> CriterionResult:
    rec = _Recorder(3, "exceedance calibration", 60.0, quick)
    f, noise, z = contraction_1d(0.5, 0.0), NoiseParams(0.5), 0.3
    obs = DistToPoint(z)
    budget = _scale(quick, 2_000_000)
    stream = 0
    for n in (100, 1000):
        for tau in (0.5, 1.0, 2.0):
            lev = level_sequence_analytic(f, noise.epsilon, z, n, tau)
            res = exceedance_rate_check(f, noise, obs, lev.u_n, n, budget, seed, first_stream=stream, workers=workers)
            stream += budget
            rec.check(f"exact n mu(B) n={n} tau={tau}", abs(res.exact - tau) <= 1e-12, f"{res.exact!r}")
            zs = abs(res.estimate - tau) / res.stderr
            rec.check(f"MC n={n} tau={tau}", zs <= 3.0, f"{res.estimate:.4f} +- {res.stderr:.4f}")
    return rec.close()


# --------------------------------------------------------------------- 4
def criterion_4(seed: int = 0, quick: bool = False, workers: int = 1) -> CriterionResult:
    rec = _Recorder(4, "Gumbel law off the attractor", 300.0, quick)
    f, noise = contraction_1d(0.5, 0.0), NoiseParams(0.5)
    n, blocks = 1000, _scale(quick, 10_000)
    lev = level_sequence_analytic(f, noise.epsilon, 0.3, n)
    res = block_maxima(f, noise, DistToPoint(0.3), n, blocks, seed, workers=workers)
    ks = ks_distance(lev.rescale(res.maxima))
    tol = 0.025 * (math.sqrt(10) if quick else 1.0)
    rec.check(f"KS distance < {tol:.3f}", ks < tol, f"KS = {ks:.4f} over {blocks} blocks")
    return rec.close()


# --------------------------------------------------------------------- 5
def criterion_5(
    seed: int = 0, quick: bool = False, workers: int = 1, simulate_epsilon: Optional[float] = None
) -> CriterionResult:
    """Extremal index at the attracting fixed point.

    ``simulate_epsilon`` runs the orbits at a different noise level than the
    nominal one the estimates are compared against (fault injection).
    """
    rec = _Recorder(5, "extremal index on the attractor", 600.0, quick)
    f = contraction_1d(0.5, 0.3)
    orbit = attractor_orbit(f)[0]
    obs = DistToOrbit(orbit.points)
    n, blocks, tau = 1000, _scale(quick, 10_000), 1.0
    tol = 0.1 if quick else 0.05
    for eps in (0.2, 0.5):
        lev = level_sequence_exact(f, eps, obs, n, tau)
        sim = NoiseParams(eps if simulate_epsilon is None else simulate_epsilon)
        res = block_maxima(f, sim, obs, n, blocks, seed, [lev.u_n], workers=workers)
        th = extremal_index_empirical(res, lev.u_n)
        rec.check(f"eps={eps} theta_logp", abs(th.theta_hat_logp - eps) <= tol, f"{th.theta_hat_logp:.4f}")
        rec.check(f"eps={eps} theta_runs", abs(th.theta_hat_runs - eps) <= tol, f"{th.theta_hat_runs:.4f}")
        target = math.exp(-eps * tau)
        zs = abs(th.p_no_exceedance - target) / th.p_no_exceedance_stderr
        rec.check(
            f"eps={eps} P(M_n<=u_n)", zs <= 3.0,
            f"{th.p_no_exceedance:.4f} +- {th.p_no_exceedance_stderr:.4f} vs {target:.4f}",
        )
    return rec.close()


# --------------------------------------------------------------------- 6
def criterion_6(seed: int = 0, quick: bool = False, workers: int = 1) -> CriterionResult:
    rec = _Recorder(6, "annealed correlation bound", 180.0, quick)
    budget = _scale(quick, 500_000)
    for name, f in builtin_maps().items():
        lo = [0.25] + [0.0] * (f.dim - 1)
        hi = [0.5] + [1.0] * (f.dim - 1)
        A = Indicator(Region(f.dim, [Box.open(lo, hi) if f.dim == 1 else Box(tuple(lo), tuple(hi), (False,) + (True,) * (f.dim - 1), (False,) + (True,) * (f.dim - 1))]))
        for eps in (0.2, 0.5, 0.8):
            rows = correlation_table(f, eps, A, A, range(1, 31), budget, seed, workers=workers)
            excess = [(r.n, abs(r.estimate) - r.bound - 4 * r.stderr) for r in rows]
            lag, worst = max(excess, key=lambda t: t[1])
            rec.check(f"{name} eps={eps}", worst <= 0.0, f"worst lag {lag}: excess {worst:.2e}")
    return rec.close()


# --------------------------------------------------------------------- 7
def criterion_7(seed: int = 0, quick: bool = False, workers: int = 1) -> CriterionResult:
    rec = _Recorder(7, "return-probability identities", 60.0, quick)
    f, eps, z, r = contraction_1d(0.5, 0.0), 0.5, 0.3, 0.01
    js = list(range(1, 6))
    analytic = [return_prob_analytic(f, eps, z, r, j).value for j in js]
    dev = max(abs(a - 0.0002 * min(j, 2)) for a, j in zip(analytic, js))
    rec.check("Pr_j = 0.0002 min(j, 2)", dev <= 1e-12, f"max deviation {dev:.2e}")
    mu = closed_form_measure(f, eps, Box.open([z - r], [z + r])).value
    rec.check("Pr_{p+1} = mu(U)^2", abs(analytic[1] - mu**2) <= 1e-12, f"{analytic[1]!r} vs {mu**2!r}")
    mc = return_prob_mc(f, eps, z, r, js, _scale(quick, 4_000_000), seed, workers=workers)
    for a, m in zip(analytic, mc):
        zs = abs(m.value - a) / m.stderr if m.stderr > 0 else math.inf
        rec.check(f"MC Pr_{m.j}", zs <= 3.0, f"{m.value:.3e} +- {m.stderr:.1e} vs {a:.3e}")
    return rec.close()


# --------------------------------------------------------------------- 8
def criterion_8(seed: int = 0, quick: bool = False, workers: int = 1) -> CriterionResult:
    rec = _Recorder(8, "short-return sums vanish", 300.0, quick)
    budget = _scale(quick, 200_000)
    grid = (100, 1000, 10_000)
    f, eps, z = contraction_1d(0.5, 0.0), 0.5, 0.3
    an, mc = [], []
    for n in grid:
        lev = level_sequence_analytic(f, eps, z, n)
        k = math.sqrt(n)
        an.append(dprime_sum_analytic(f, eps, z, math.exp(-lev.u_n), n, k).value)
        mc.append(dprime_sum(f, eps, DistToPoint(z), lev.u_n, n, k, budget, seed, workers).value)
    g = contraction_1d(0.5, 0.3)
    obs = DistToOrbit(attractor_orbit(g)[0].points)
    cl = []
    for n in grid:
        lev = level_sequence_exact(g, eps, obs, n)
        cl.append(cluster_return_sum(g, eps, obs.region(lev.u_n), n, math.sqrt(n), budget, seed, workers).value)
    for label, vals in (("D' analytic", an), ("D' Monte Carlo", mc), ("cluster sum", cl)):
        dec = all(b < a for a, b in zip(vals, vals[1:]))
        rec.check(f"{label} decreasing", dec, ", ".join(f"{v:.4g}" for v in vals))
        rec.check(f"{label} < 0.05 at n=1e4", vals[-1] < 0.05, f"{vals[-1]:.4g}")
    return rec.close()


# --------------------------------------------------------------------- 9
def criterion_9(seed: int = 0, quick: bool = False, workers: int = 1) -> CriterionResult:
    rec = _Recorder(9, "cluster-set probability", 120.0, quick)
    f = contraction_1d(0.5, 0.3)
    obs = DistToOrbit(attractor_orbit(f)[0].points)
    for eps in (0.2, 0.5):
        lev = level_sequence_exact(f, eps, obs, 100)
        res = cluster_probability_ratio(f, eps, obs.region(lev.u_n), _scale(quick, 1_000_000), seed, workers=workers)
        zs = abs(res.ratio - res.reference) / res.stderr
        rec.check(f"eps={eps}", zs <= 3.0, f"{res.ratio:.4f} +- {res.stderr:.4f} vs {res.reference:.4f}")
    return rec.close()


# -------------------------------------------------------------------- 10
def criterion_10(seed: int = 0, quick: bool = False, workers: int = 1, depth: int = 6) -> CriterionResult:
    rec = _Recorder(10, "structural set identities", 30.0, quick)
    for name, f in builtin_maps().items():
        chain = f.lambda_chain(depth=depth)
        nested = all(chain[k + 1].issubset(chain[k]) for k in range(depth))
        rec.check(f"{name} nesting", nested)
        is_open = all(b.is_open() for k in range(1, depth + 1) for b in chain[k])
        rec.check(f"{name} openness", is_open)
        images = [None] + [f.singular_images(p) for p in range(1, depth + 1)]
        disjoint = all(not chain[k].intersects(images[p]) for k in range(1, depth + 1) for p in range(1, k + 1))
        rec.check(f"{name} Lambda_k misses f^p(singular set)", disjoint)
    for label, f in (
        ("contraction_1d(0.5,0.3)", contraction_1d(0.5, 0.3)),
        ("contraction_1d(0.5,0.8)", contraction_1d(0.5, 0.8)),
        ("quad_affine(0.5,0.5,0.5)", quad_affine(0.5, 0.5, 0.5)),
    ):
        for orbit in attractor_orbit(f):
            obs = DistToOrbit(orbit.points)
            for n in (100, 1000):
                lev = level_sequence_exact(f, 0.5, obs, n)
                rec.check(f"{label} f(U_n) in U_n, n={n}", is_forward_invariant(f, obs.region(lev.u_n)))
    return rec.close()


CRITERIA: dict = {
    1: criterion_1,
    2: criterion_2,
    3: criterion_3,
    4: criterion_4,
    5: criterion_5,
    6: criterion_6,
    7: criterion_7,
    8: criterion_8,
    9: criterion_9,
    10: criterion_10,
}


def run_all(
    seed: int = 0,
    quick: bool = False,
    workers: int = 1,
    only=None,
    simulate_epsilon: Optional[float] = None,
    report: Optional[Callable] = None,
) -> list:
    """Run the selected criteria in order, passing each result to ``report`` as it finishes."""
    out = []
    for k, func in CRITERIA.items():
        if only is not None and k not in only:
            continue
        kw = {"simulate_epsilon": simulate_epsilon} if k == 5 else {}
        res = func(seed=seed, quick=quick, workers=workers, **kw)
        if report is not None:
            report(res)
        out.append(res)
    return out
