"""Extreme-value analysis of distance observables along random orbits."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from functools import partial
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .boxes import Box, Region, sup_ball
from .density import check_contraction_condition, closed_form_density, closed_form_measure, stratum, truncation_depth
from .errors import (
    AssumptionViolated,
    AttractorError,
    BudgetError,
    CapabilityError,
    ConfigError,
    EstimateUndefined,
    LevelError,
)
from .maps import PiecewiseMap
from .rasp import NoiseParams, iterate_states, map_chunks, sample_stationary_many
from .rng import StreamBatch


# ------------------------------------------------------------ observables
class _DistanceObservable:
    targets: np.ndarray

    @property
    def dim(self) -> int:
        return self.targets.shape[1]

    def __call__(self, X) -> np.ndarray:
        """``-log`` of the sup distance to the target set, row by row."""
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        d = np.full(len(X), np.inf)
        for t in self.targets:
            d = np.minimum(d, np.max(np.abs(X - t), axis=1))
        with np.errstate(divide="ignore"):
            return -np.log(d)

    def value(self, x) -> float:
        return float(self(np.atleast_1d(np.asarray(x, dtype=float)))[0])

    def radius(self, u: float) -> float:
        return math.exp(-u)

    def region(self, u: float) -> Region:
        """``{Y > u}``: union of open sup-balls of radius ``e^-u`` around the targets."""
        r = self.radius(u)
        return Region(self.dim, [sup_ball(t, r) for t in self.targets])

    def region_radius(self, r: float) -> Region:
        return Region(self.dim, [sup_ball(t, r) for t in self.targets])


@dataclass(frozen=True, eq=False)
class DistToPoint(_DistanceObservable):
    z: np.ndarray

    kind = "DistToPoint"

    def __post_init__(self):
        object.__setattr__(self, "z", np.atleast_1d(np.asarray(self.z, dtype=float)))

    @property
    def targets(self) -> np.ndarray:
        return self.z[None, :]


@dataclass(frozen=True, eq=False)
class DistToOrbit(_DistanceObservable):
    points: np.ndarray

    kind = "DistToOrbit"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        object.__setattr__(self, "points", pts)

    @property
    def targets(self) -> np.ndarray:
        return self.points


def observable_eval(obs, x) -> float:
    return obs.value(x)


def is_forward_invariant(fmap: PiecewiseMap, region: Region) -> bool:
    """Exact test of ``f(region) ⊆ region`` (boundary points included)."""
    return fmap.image_extended(region.intersect(fmap.domain)).issubset(region)


# ------------------------------------------------------------------ levels
@dataclass(frozen=True)
class LevelSequence:
    """Threshold ``u_n = y / a_n + b_n`` with ``y = -log tau``."""

    a_n: float
    b_n: float
    tau: float
    n: int
    method: str = "analytic"
    u: Optional[float] = None

    @property
    def y(self) -> float:
        return -math.log(self.tau)

    @property
    def u_n(self) -> float:
        if self.u is not None:
            return self.u
        return self.y / self.a_n + self.b_n

    def threshold(self, y: float) -> float:
        return y / self.a_n + self.b_n

    def rescale(self, m):
        return self.a_n * (np.asarray(m, dtype=float) - self.b_n)


def _check_tau(tau, n):
    if n < 1:
        raise ConfigError("block length must be at least 1", "n")
    if not (tau > 0) or not math.isfinite(tau):
        raise ConfigError(f"must be positive and finite, got {tau}", "tau")


def level_sequence_analytic(
    fmap: PiecewiseMap, epsilon: float, z, n: int, tau: Optional[float] = None, y: Optional[float] = None
) -> LevelSequence:
    """``a_n = D``, ``b_n = log 2 + log(n h(z)) / D`` from the density at ``z``.

    The ball must stay inside the domain and inside the stratum of ``z``
    (where the density is constant); if ``z`` lies in every image set the
    density must be continuous there, which needs the contraction condition.
    """
    if y is not None:
        tau = math.exp(-y)
    tau = 1.0 if tau is None else float(tau)
    _check_tau(tau, n)
    z = np.atleast_1d(np.asarray(z, dtype=float))
    D = fmap.dim
    h = closed_form_density(fmap, epsilon, z)
    b_n = math.log(2.0) + math.log(n * h) / D
    lev = LevelSequence(float(D), b_n, tau, int(n))
    ball = sup_ball(z, math.exp(-lev.u_n))
    if not ball.closure().issubset(Box.open([0.0] * D, [1.0] * D)):
        raise LevelError(f"ball of radius {math.exp(-lev.u_n):.3g} leaves the domain at n={n}; increase n")
    K = truncation_depth(epsilon, 1e-15)
    p = stratum(fmap, z, K)
    if p >= K:
        if not check_contraction_condition(fmap, epsilon).holds:
            raise LevelError("z is on the attractor and the density is unbounded there; use exact levels")
        return lev
    chain = fmap.lambda_chain(depth=p + 1)
    if not Region(D, [ball]).issubset(chain[p]) or chain[p + 1].intersects(ball.closure()):
        raise LevelError(f"ball leaves the stratum p={p} at n={n}; increase n")
    return lev


def level_sequence_exact(
    fmap: PiecewiseMap, epsilon: float, obs, n: int, tau: float = 1.0, tol: float = 1e-14
) -> LevelSequence:
    """Radius ``r`` solving ``n mu_eps({Y > -log r}) = tau`` with the closed-form measure.

    Works where the density is unbounded, e.g. at an attracting periodic orbit.
    """
    _check_tau(tau, n)
    if tau > n:
        raise ConfigError("tau cannot exceed n", "tau")
    target = tau / n

    def excess(log_r):
        return closed_form_measure(fmap, epsilon, obs.region_radius(math.exp(log_r)), tol).value - target

    hi = 0.0
    lo = -1.0
    while excess(lo) >= 0:
        lo *= 2
        if lo < -700:
            raise LevelError("could not bracket the level radius")
    log_r = brentq(excess, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    u = -log_r
    D = fmap.dim
    b_n = u + math.log(tau) / D
    return LevelSequence(float(D), b_n, float(tau), int(n), "exact")


def level_sequence_empirical(
    fmap: PiecewiseMap,
    noise: NoiseParams,
    obs,
    n: int,
    tau: float,
    budget: int,
    seed: int = 0,
    burn_in: Optional[int] = None,
    workers: int = 1,
) -> LevelSequence:
    """``u_n`` as the empirical ``(1 - tau/n)``-quantile of ``Y_0`` under stationary samples."""
    _check_tau(tau, n)
    if tau > n:
        raise ConfigError("tau cannot exceed n", "tau")
    if budget * tau / n < 10:
        raise BudgetError(f"budget {budget} gives fewer than 10 expected exceedances; need >= {math.ceil(10 * n / tau)}")
    X = sample_stationary_many(fmap, noise, budget, burn_in, seed, workers=workers)
    u = float(np.quantile(obs(X), 1.0 - tau / n))
    return LevelSequence(1.0, u, float(tau), int(n), "empirical", u=u)


# ------------------------------------------------------------ block maxima
@dataclass(eq=False)
class BlockResults:
    """Per-block maxima and, for each threshold, exceedance and cluster counts."""

    n: int
    maxima: np.ndarray
    thresholds: np.ndarray
    exceedances: np.ndarray
    clusters: np.ndarray
    seed: int
    mode: str
    paths: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def blocks(self) -> int:
        return len(self.maxima)

    def threshold_index(self, u: float) -> int:
        hits = np.flatnonzero(self.thresholds == u)
        if len(hits) == 0:
            raise ConfigError(f"threshold {u} was not tracked", "threshold")
        return int(hits[0])


class _BlockFold:
    def __init__(self, rows: int, n: int, thresholds: np.ndarray, keep_paths: bool):
        T = len(thresholds)
        self.u = thresholds
        self.maxima = np.full(rows, -np.inf)
        self.exc = np.zeros((rows, T), dtype=np.int64)
        self.ends = np.zeros((rows, T), dtype=np.int64)
        self.prev = np.zeros((rows, T), dtype=bool)
        self.paths = np.empty((rows, n)) if keep_paths else None

    def add(self, t: int, Y: np.ndarray):
        np.maximum(self.maxima, Y, out=self.maxima)
        cur = Y[:, None] > self.u[None, :]
        self.exc += cur
        self.ends += self.prev & ~cur
        self.prev = cur
        if self.paths is not None:
            self.paths[:, t] = Y

    def close(self):
        self.ends += self.prev
        return self.maxima, self.exc, self.ends, self.paths


def _fresh_chunk(fmap, noise, obs, n, burn_in, seed, thresholds, keep_paths, indices):
    fold = _BlockFold(len(indices), n, thresholds, keep_paths)
    for t, X, _ in iterate_states(fmap, noise, StreamBatch(seed, indices), n, burn_in):
        fold.add(t, obs(X))
    return fold.close()


def block_maxima(
    fmap: PiecewiseMap,
    noise: NoiseParams,
    obs,
    n: int,
    blocks: int,
    seed: int = 0,
    thresholds: Sequence[float] = (),
    burn_in: Optional[int] = None,
    mode: str = "fresh",
    workers: int = 1,
    keep_paths: bool = False,
    chunk: int = 4096,
) -> BlockResults:
    """Maxima of ``Y_0..Y_{n-1}`` over independent blocks.

    ``mode="fresh"`` starts block ``b`` from its own stream ``b`` after a
    burn-in; ``mode="slice"`` cuts one long orbit (stream 0) into consecutive
    blocks.  A cluster ends at an exceedance followed by a non-exceedance or
    by the end of the block.
    """
    if n < 1:
        raise ConfigError("block length must be at least 1", "n")
    if blocks < 1:
        raise ConfigError("block count must be at least 1", "blocks")
    if burn_in is None:
        burn_in = noise.default_burn_in
    u = np.asarray(thresholds, dtype=float).reshape(-1)
    if mode == "fresh":
        func = partial(_fresh_chunk, fmap, noise, obs, int(n), int(burn_in), int(seed), u, keep_paths)
        parts = map_chunks(func, np.arange(blocks), workers, chunk)
        maxima, exc, ends, paths = (
            np.concatenate([p[i] for p in parts]) if parts[0][i] is not None else None for i in range(4)
        )
    elif mode == "slice":
        fold = None
        maxima, exc, ends, paths = [], [], [], []
        for t, X, _ in iterate_states(fmap, noise, StreamBatch(seed, [0]), n * blocks, burn_in):
            if t % n == 0:
                fold = _BlockFold(1, n, u, keep_paths)
            fold.add(t % n, obs(X))
            if t % n == n - 1:
                for acc, v in zip((maxima, exc, ends, paths), fold.close()):
                    acc.append(v)
        maxima, exc, ends = np.concatenate(maxima), np.concatenate(exc), np.concatenate(ends)
        paths = np.concatenate(paths) if keep_paths else None
    else:
        raise ConfigError(f"unknown mode {mode!r}; use 'fresh' or 'slice'", "mode")
    return BlockResults(int(n), maxima, u, exc, ends, int(seed), mode, paths)


# ------------------------------------------------------------------- Gumbel
def gumbel_cdf(y):
    """``exp(-exp(-y))``."""
    with np.errstate(over="ignore"):
        out = np.exp(-np.exp(-np.asarray(y, dtype=float)))
    return float(out) if np.ndim(out) == 0 else out


def ks_distance(samples, cdf=gumbel_cdf) -> float:
    """Two-sided sup distance between the empirical CDF and ``cdf``."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    m = len(x)
    if m == 0:
        raise ConfigError("need at least one sample", "samples")
    F = np.asarray(cdf(x), dtype=float) * np.ones(m)
    i = np.arange(1, m + 1)
    return float(max(np.max(i / m - F), np.max(F - (i - 1) / m)))


def ecdf_table(samples, cdf=gumbel_cdf, points: int = 201):
    """Rows ``(y, empirical CDF, model CDF)`` on a grid spanning the finite samples."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    fin = x[np.isfinite(x)]
    if len(fin) == 0:
        return []
    grid = np.linspace(fin[0], fin[-1], points)
    emp = np.searchsorted(x, grid, side="right") / len(x)
    model = np.asarray(cdf(grid)) * np.ones(points)
    return [(float(a), float(b), float(c)) for a, b, c in zip(grid, emp, model)]


# --------------------------------------------------------- exceedance rate
class ExceedanceCheck(NamedTuple):
    estimate: float
    stderr: float
    exact: Optional[float]
    exact_error: Optional[float]


def exceedance_rate_check(
    fmap: PiecewiseMap,
    noise: NoiseParams,
    obs,
    u: float,
    n: int,
    budget: int,
    seed: int = 0,
    burn_in: Optional[int] = None,
    workers: int = 1,
    first_stream: int = 0,
) -> ExceedanceCheck:
    """``n P(Y_0 > u)`` by Monte Carlo and, for box-affine maps, exactly."""
    if not math.isfinite(u):
        raise ConfigError("threshold must be finite", "u")
    X = sample_stationary_many(fmap, noise, budget, burn_in, seed, first_stream, workers)
    p = float(np.mean(obs(X) > u))
    se = n * math.sqrt(p * (1.0 - p) / budget)
    exact = err = None
    if fmap.is_box_affine:
        est = closed_form_measure(fmap, noise.epsilon, obs.region(u))
        exact, err = n * est.value, n * est.error
    return ExceedanceCheck(n * p, se, exact, err)


# ---------------------------------------------------------------- attractor
@dataclass(frozen=True, eq=False)
class PeriodicOrbit:
    points: np.ndarray
    period: int
    margin: float


def _singular_margin(fmap: PiecewiseMap, x: np.ndarray) -> float:
    """Sup-distance from ``x`` to the singular set (box pieces)."""
    for p in fmap.pieces:
        if p.region.contains(x):
            lo, hi = np.array(p.region.lo), np.array(p.region.hi)
            return float(min(np.min(x - lo), np.min(hi - x)))
    return 0.0


def attractor_orbit(
    fmap: PiecewiseMap,
    delta: float = 1e-12,
    max_iter: int = 100_000,
    probes: int = 32,
    max_period: int = 64,
) -> list:
    """Periodic orbits reached by unperturbed iteration from a probe grid.

    Each orbit is refined to the exact fixed point of the composed affine
    branches, checked to satisfy ``f^p(w) = w`` within ``delta`` and to stay
    at least ``10 delta`` away from the singular set.
    """
    fmap._require_box_affine()
    D = fmap.dim
    c = (np.arange(probes) + 0.5) / probes
    X = np.column_stack([m.ravel() for m in np.meshgrid(*([c] * D), indexing="ij")])
    window = 2 * max_period
    hist = np.empty((window, len(X), D))
    done = np.zeros(len(X), dtype=bool)
    period = np.zeros(len(X), dtype=np.int64)
    it = 0
    while not done.all():
        for j in range(window):
            idx = fmap.piece_indices(X)
            X, _ = fmap.evaluate_many(X, np.where(idx < 0, 0, idx))
            hist[j] = X
            it += 1
        for p in range(1, max_period + 1):
            close = np.max(np.abs(hist[-1] - hist[-1 - p]), axis=1) < delta
            new = close & ~done
            period[new] = p
            done |= close
        if it >= max_iter and not done.all():
            raise AttractorError(f"{int((~done).sum())} probe orbits did not settle within {max_iter} iterations")
    orbits: list = []
    for row in np.unique(np.column_stack([period, np.round(X / (10 * delta))]), axis=0, return_index=True)[1]:
        p = int(period[row])
        x = X[row]
        scale, shift, visited = np.ones(D), np.zeros(D), []
        y = x.copy()
        for _ in range(p):
            piece = fmap.pieces[fmap.piece_index(y)] if fmap.piece_indices(y[None])[0] >= 0 else None
            if piece is None:
                raise AssumptionViolated(f"attractor point {y.tolist()} lies on the singular set")
            s = np.diag(piece.matrix)
            scale, shift = s * scale, s * shift + piece.offset
            y = piece.apply(y)
        w = shift / (1.0 - scale)
        pts = [w]
        for _ in range(p - 1):
            pts.append(fmap.evaluate_extended(pts[-1]))
        pts = np.array(pts)
        back = fmap.evaluate_extended(pts[-1])
        if np.max(np.abs(back - w)) > delta:
            raise AttractorError("refined orbit does not close within delta")
        margin = min(_singular_margin(fmap, q) for q in pts)
        if margin < 10 * delta:
            raise AssumptionViolated(
                f"attractor orbit through {w.tolist()} is within {margin:.3g} of the singular set"
            )
        if any(
            o.period == p and all(np.min(np.max(np.abs(o.points - q), axis=1)) < 10 * delta for q in pts)
            for o in orbits
        ):
            continue
        orbits.append(PeriodicOrbit(pts, p, margin))
    return orbits


# ----------------------------------------------------------- extremal index
def extremal_index_analytic(epsilon: float, region) -> float:
    """``eps (1 - m(U))``, whose limit as ``m(U) -> 0`` is ``eps``."""
    m = region if isinstance(region, (int, float)) else region.measure()
    if not (0.0 <= m <= 1.0):
        raise ConfigError("region measure must lie in [0, 1]", "region")
    return epsilon * (1.0 - m)


class ThetaEstimate(NamedTuple):
    theta_hat_logp: float
    theta_hat_runs: float
    logp_stderr: float
    runs_stderr: float
    p_no_exceedance: float
    p_no_exceedance_stderr: float
    exceedance_rate: float
    exceedances: int
    clusters: int


def extremal_index_empirical(results: BlockResults, u: float) -> ThetaEstimate:
    """Log-probability and runs estimators of the extremal index at threshold ``u``.

    Standard errors come from the delta method over block-level totals.
    """
    i = results.threshold_index(u)
    B, n = results.blocks, results.n
    s = (results.exceedances[:, i] == 0).astype(float)
    c = results.exceedances[:, i].astype(float)
    k = results.clusters[:, i].astype(float)
    ms, mc, mk = s.mean(), c.mean(), k.mean()
    total_c, total_k = int(c.sum()), int(k.sum())
    if total_c == 0:
        raise EstimateUndefined(f"no exceedances of u={u} in {B} blocks")
    if ms in (0.0, 1.0):
        raise EstimateUndefined(f"P(M_n <= u) estimate is {ms} over {B} blocks ({int(s.sum())} without exceedance)")
    theta_logp = -math.log(ms) / mc
    theta_runs = mk / mc
    cov = np.cov(np.vstack([s, c, k]), ddof=1) / B
    g = np.array([-1.0 / (ms * mc), math.log(ms) / mc**2, 0.0])
    h = np.array([0.0, -mk / mc**2, 1.0 / mc])
    return ThetaEstimate(
        theta_logp,
        theta_runs,
        float(math.sqrt(max(g @ cov @ g, 0.0))),
        float(math.sqrt(max(h @ cov @ h, 0.0))),
        ms,
        math.sqrt(ms * (1.0 - ms) / B),
        mc,
        total_c,
        total_k,
    )


# ---------------------------------------------------------------- reports
@dataclass(eq=False)
class EvtReport:
    level: LevelSequence
    results: BlockResults
    ks: float
    p_no_exceedance: float
    p_no_exceedance_stderr: float
    theta_analytic: Optional[float] = None
    theta: Optional[ThetaEstimate] = None
    exceedance: Optional[ExceedanceCheck] = None
    info: dict = field(default_factory=dict)

    @property
    def rescaled(self) -> np.ndarray:
        return self.level.rescale(self.results.maxima)

    def scalars(self) -> dict:
        out = {
            "n": self.results.n,
            "blocks": self.results.blocks,
            "mode": self.results.mode,
            "level": asdict(self.level) | {"u_n": self.level.u_n},
            "ks_distance": self.ks,
            "p_no_exceedance": self.p_no_exceedance,
            "p_no_exceedance_stderr": self.p_no_exceedance_stderr,
            "theta_analytic": self.theta_analytic,
        }
        if self.theta is not None:
            out["theta"] = self.theta._asdict()
        if self.exceedance is not None:
            out["exceedance_rate"] = self.exceedance._asdict()
        out.update(self.info)
        return out

    def to_json(self) -> str:
        return json.dumps(self.scalars(), indent=2, default=float)

    def maxima_rows(self):
        return [(b, float(m), float(r)) for b, (m, r) in enumerate(zip(self.results.maxima, self.rescaled))]

    def cdf_rows(self, points: int = 201):
        return ecdf_table(self.rescaled, gumbel_cdf, points)

    def write(self, directory, header: str = ""):
        """Write ``report.json``, ``maxima.csv`` and ``cdf.csv`` into ``directory``."""
        from pathlib import Path

        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "report.json").write_text(self.to_json() + "\n")
        for name, cols, rows in (
            ("maxima.csv", ("block_index", "M_n", "rescaled"), self.maxima_rows()),
            ("cdf.csv", ("y", "empirical_cdf", "gumbel_cdf"), self.cdf_rows()),
        ):
            with open(d / name, "w", newline="") as fh:
                if header:
                    fh.write(header + "\n")
                w = csv.writer(fh)
                w.writerow(cols)
                w.writerows(rows)


def run_evt(
    fmap: PiecewiseMap,
    noise: NoiseParams,
    obs,
    level: LevelSequence,
    blocks: int,
    seed: int = 0,
    workers: int = 1,
    mode: str = "fresh",
    burn_in: Optional[int] = None,
    rate_budget: int = 0,
) -> EvtReport:
    """Block maxima at ``level`` with Gumbel comparison and extremal-index estimates."""
    u = level.u_n
    res = block_maxima(fmap, noise, obs, level.n, blocks, seed, [u], burn_in, mode, workers)
    p = float(np.mean(res.maxima <= u))
    theta = None
    try:
        theta = extremal_index_empirical(res, u)
    except EstimateUndefined:
        pass
    exc = None
    if rate_budget:
        exc = exceedance_rate_check(fmap, noise, obs, u, level.n, rate_budget, seed + 1, burn_in, workers)
    theta_a = None
    if isinstance(obs, DistToOrbit):
        theta_a = extremal_index_analytic(noise.epsilon, obs.region(u).intersect(fmap.domain))
    return EvtReport(
        level, res, ks_distance(level.rescale(res.maxima)), p, math.sqrt(p * (1 - p) / blocks),
        theta_a, theta, exc,
    )
