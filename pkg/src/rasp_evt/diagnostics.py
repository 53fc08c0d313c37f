"""Monte Carlo and closed-form checks of the dependence conditions.

Covers annealed correlation decay, the mixing gaps for the exceedance and
cluster events, the short-return sums and the exact return probabilities for
balls inside a single stratum.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from functools import partial
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .boxes import Box, Region, sup_ball
from .density import closed_form_density_many, closed_form_measure, stratum
from .errors import AssumptionViolated, ConfigError, LevelError
from .evt import is_forward_invariant
from .maps import PiecewiseMap
from .rasp import NoiseParams, iterate_states, map_chunks
from .rng import StreamBatch

ANALYTIC = "Analytic"
MONTE_CARLO = "MonteCarlo"


# ------------------------------------------------------------ observables
@dataclass(frozen=True, eq=False)
class Indicator:
    """Indicator of a region; bounded with sup-norm 1 (0 for the empty set)."""

    region: Region

    @property
    def sup_norm(self) -> float:
        return 0.0 if self.region.is_empty() else 1.0

    def __call__(self, X) -> np.ndarray:
        return self.region.contains_many(X).astype(float)


@dataclass(frozen=True, eq=False)
class Constant:
    value: float = 1.0

    @property
    def sup_norm(self) -> float:
        return abs(self.value)

    def __call__(self, X) -> np.ndarray:
        return np.full(len(np.atleast_2d(X)), float(self.value))


@dataclass(frozen=True, eq=False)
class _NextVisitProbability:
    """``P(x_{t+1} in U | x_t) = (1-eps) 1_U(f(x_t)) + eps m(U)``."""

    fmap: PiecewiseMap
    epsilon: float
    region: Region

    def __call__(self, X) -> np.ndarray:
        Y, _ = self.fmap.evaluate_many(X)
        return (1.0 - self.epsilon) * self.region.contains_many(Y) + self.epsilon * self.region.measure()


def _weighted_l1(fmap, epsilon, psi) -> tuple:
    """``||psi h_eps||_1`` and its error bound, for indicators and constants."""
    if isinstance(psi, Constant):
        return abs(psi.value), 0.0
    if isinstance(psi, Indicator):
        est = closed_form_measure(fmap, epsilon, psi.region)
        return est.value, est.error
    raise ConfigError("psi must be an Indicator or Constant for the closed-form bound", "psi")


# ----------------------------------------------------------- orbit sampling
def _uniform_in(region: Region, batch: StreamBatch, attempt: int = 0) -> np.ndarray:
    """One uniform point of ``region`` per stream, drawn at the reserved initial step."""
    boxes = list(region)
    w = np.array([b.measure() for b in boxes])
    cum = np.cumsum(w / w.sum())
    pick = np.minimum(np.searchsorted(cum, batch.uniform(-1, 63), side="right"), len(boxes) - 1)
    U = batch.points(-1, region.dim, attempt=attempt)
    lo = np.array([b.lo for b in boxes])[pick]
    hi = np.array([b.hi for b in boxes])[pick]
    return lo + U * (hi - lo)


def _uniform_outside(region: Region, batch: StreamBatch) -> np.ndarray:
    """Uniform points of the cube minus ``region`` by rejection."""
    X = batch.points(-1, region.dim)
    bad = region.contains_many(X)
    attempt = 0
    while np.any(bad):
        attempt += 1
        rows = np.flatnonzero(bad)
        X[rows] = batch.points(-1, region.dim, rows, attempt)
        bad[rows] = region.contains_many(X[rows])
    return X


def _trace_chunk(fmap, noise, steps, burn_in, seed, start, observables, indices):
    """Values of each observable along ``steps + 1`` states of every stream."""
    batch = StreamBatch(seed, indices)
    x0 = None
    if start is not None:
        kind, region = start
        x0 = _uniform_in(region, batch) if kind == "inside" else _uniform_outside(region, batch)
        burn_in = 0
    out = np.empty((len(observables), len(indices), steps + 1))
    for t, X, _ in iterate_states(fmap, noise, batch, steps + 1, burn_in, x0=x0):
        for i, g in enumerate(observables):
            out[i, :, t] = g(X)
    return out, x0


def _traces(fmap, noise, steps, budget, seed, observables, start=None, burn_in=None, workers=1, first_stream=0):
    if budget < 2:
        raise ConfigError("budget must be at least 2", "budget")
    if burn_in is None:
        burn_in = noise.default_burn_in
    func = partial(_trace_chunk, fmap, noise, int(steps), int(burn_in), int(seed), start, tuple(observables))
    parts = map_chunks(func, np.arange(first_stream, first_stream + budget), workers, 32768)
    vals = np.concatenate([p[0] for p in parts], axis=1)
    x0 = None if parts[0][1] is None else np.concatenate([p[1] for p in parts])
    return vals, x0


def _mean_se(v) -> tuple:
    v = np.asarray(v, dtype=float)
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v)))


# ------------------------------------------------------------ correlations
class CorrelationEstimate(NamedTuple):
    n: int
    estimate: float
    stderr: float
    bound: float


def correlation_table(
    fmap: PiecewiseMap,
    epsilon: float,
    phi,
    psi,
    lags: Sequence[int],
    budget: int,
    seed: int = 0,
    burn_in: Optional[int] = None,
    workers: int = 1,
) -> list:
    """Annealed correlation of ``phi(x_n)`` and ``psi(x_0)`` for several lags from one batch of orbits.

    The bound is ``2 (1-eps)^n sup|phi| ||psi h_eps||_1`` with the closed-form
    weighted norm (its truncation error bound added).
    """
    lags = [int(n) for n in lags]
    if not lags or min(lags) < 1:
        raise ConfigError("lags must be at least 1", "lags")
    sup = getattr(phi, "sup_norm", None)
    if sup is None or not math.isfinite(sup):
        raise ConfigError("phi must be bounded with a known sup norm", "phi")
    l1, l1_err = _weighted_l1(fmap, epsilon, psi)
    noise = NoiseParams(epsilon)
    vals, _ = _traces(fmap, noise, max(lags), budget, seed, [phi, psi], burn_in=burn_in, workers=workers)
    b = vals[1][:, 0]
    bc = b - b.mean()
    N = len(b)
    out = []
    for n in lags:
        a = vals[0][:, n]
        ac = a - a.mean()
        prod = ac * bc
        est = float(prod.sum() / (N - 1))
        se = float(prod.std(ddof=1) / math.sqrt(N))
        out.append(CorrelationEstimate(n, est, se, 2.0 * (1.0 - epsilon) ** n * sup * (l1 + l1_err)))
    return out


def correlation_estimate(fmap, epsilon, phi, psi, n: int, budget: int, seed: int = 0, **kw) -> CorrelationEstimate:
    return correlation_table(fmap, epsilon, phi, psi, [n], budget, seed, **kw)[0]


# ------------------------------------------------------------- mixing gaps
class MixingGap(NamedTuple):
    gap: float
    estimate: float
    stderr: float
    bound: float
    p_event: float
    p_event_stderr: float


def _event_indicators(inside: np.ndarray, q: int) -> np.ndarray:
    """``A^(q)`` at each time: in ``U`` now and (for ``q = 1``) outside at the next step."""
    if q == 0:
        return inside
    return inside[:, :-1] * (1.0 - inside[:, 1:])


def mixing_gap_estimate(
    fmap: PiecewiseMap,
    epsilon: float,
    region: Region,
    q: int,
    t: int,
    ell: int,
    budget: int,
    seed: int = 0,
    burn_in: Optional[int] = None,
    workers: int = 1,
) -> MixingGap:
    """``|P(A ∩ W_{t,ell}) - P(A) P(W_{0,ell})|`` with common random numbers.

    ``W_{s,ell}`` is the event that ``A`` does not occur at times
    ``s..s+ell-1``; for ``ell = 0`` it is the sure event.  The standard error
    comes from the delta method on the three sample means.
    """
    if q not in (0, 1):
        raise ConfigError("q must be 0 or 1", "q")
    if t < 1:
        raise ConfigError("t must be at least 1", "t")
    if ell < 0:
        raise ConfigError("ell must be non-negative", "ell")
    noise = NoiseParams(epsilon)
    steps = max(t + ell, ell, 1) + q - 1
    vals, _ = _traces(fmap, noise, steps, budget, seed, [Indicator(region)], burn_in=burn_in, workers=workers)
    events = _event_indicators(vals[0], q)
    a = events[:, 0]
    w_t = np.prod(1.0 - events[:, t:t + ell], axis=1) if ell else np.ones_like(a)
    w_0 = np.prod(1.0 - events[:, :ell], axis=1) if ell else np.ones_like(a)
    aw = a * w_t
    m1, ma, mw = aw.mean(), a.mean(), w_0.mean()
    est = float(m1 - ma * mw)
    N = len(a)
    infl = (aw - m1) - mw * (a - ma) - ma * (w_0 - mw)
    se = float(infl.std(ddof=1) / math.sqrt(N))
    mu = closed_form_measure(fmap, epsilon, region).value if fmap.is_box_affine else float(vals[0][:, 0].mean())
    if N * mu < 10:
        warnings.warn(f"budget {N} gives fewer than 10 expected visits to U; stderr inflated", RuntimeWarning)
        se = max(se, math.sqrt(mu / N))
    scale = epsilon if q == 1 else 1.0
    bound = 2.0 * scale * mu * (1.0 - epsilon) ** t
    pa, pa_se = _mean_se(a)
    return MixingGap(abs(est), est, se, bound, pa, pa_se)


# ------------------------------------------------------- return probabilities
class ReturnProbability(NamedTuple):
    j: int
    value: float
    mode: str
    stderr: float = 0.0


def _stratum_ball(fmap: PiecewiseMap, z, r: float):
    z = np.atleast_1d(np.asarray(z, dtype=float))
    ball = sup_ball(z, r)
    if not ball.closure().issubset(Box.open([0.0] * fmap.dim, [1.0] * fmap.dim)):
        raise LevelError("ball leaves the domain")
    p = stratum(fmap, z, 256)
    if p >= 256:
        raise LevelError("z lies on the attractor; the ball is not inside a single stratum")
    chain = fmap.lambda_chain(depth=p + 1)
    if not Region(fmap.dim, [ball]).issubset(chain[p]) or chain[p + 1].intersects(ball.closure()):
        raise LevelError(f"ball of radius {r} is not inside stratum p={p}")
    return z, ball, p


def return_prob_analytic(fmap: PiecewiseMap, epsilon: float, z, r: float, j: int) -> ReturnProbability:
    """``eps mu(U) sum_{k<=min(j-1,p)} (1-eps)^k J_k m(U)`` for ``U = B(z, r)`` inside stratum ``p``."""
    if j < 1:
        raise ConfigError("j must be at least 1", "j")
    z, ball, p = _stratum_ball(fmap, z, r)
    mU = ball.measure()
    muU = closed_form_measure(fmap, epsilon, ball).value
    _, jac = fmap.backward_depth(z, p)
    s = sum((1.0 - epsilon) ** k * jac[k] for k in range(min(j - 1, p) + 1))
    return ReturnProbability(j, epsilon * muU * s * mU, ANALYTIC)


def return_prob_mc(
    fmap: PiecewiseMap,
    epsilon: float,
    z,
    r: float,
    js: Sequence[int],
    budget: int,
    seed: int = 0,
    burn_in: Optional[int] = None,
    workers: int = 1,
) -> list:
    """``P(x_0 in U, x_j in U)`` from plain stationary orbits."""
    ball = sup_ball(np.atleast_1d(np.asarray(z, dtype=float)), r)
    ind = Indicator(Region(fmap.dim, [ball]))
    vals, _ = _traces(fmap, NoiseParams(epsilon), max(js), budget, seed, [ind], burn_in=burn_in, workers=workers)
    out = []
    for j in js:
        m, se = _mean_se(vals[0][:, 0] * vals[0][:, j])
        out.append(ReturnProbability(int(j), m, MONTE_CARLO, se))
    return out


# -------------------------------------------------------- short-return sums
class ReturnSum(NamedTuple):
    value: float
    stderr: float
    mode: str
    terms: int


def _block_count(n: int, k_n: float) -> int:
    if k_n < 2:
        raise ConfigError("k_n must be at least 2", "k_n")
    return int(math.floor(n / k_n))


def dprime_sum_analytic(fmap: PiecewiseMap, epsilon: float, z, r: float, n: int, k_n: float) -> ReturnSum:
    J = _block_count(n, k_n)
    total = sum(return_prob_analytic(fmap, epsilon, z, r, j).value for j in range(1, J + 1))
    return ReturnSum(n * total, 0.0, ANALYTIC, J)


def dprime_sum(
    fmap: PiecewiseMap,
    epsilon: float,
    obs,
    u: float,
    n: int,
    k_n: float,
    budget: int,
    seed: int = 0,
    workers: int = 1,
) -> ReturnSum:
    """``n sum_{j=1}^{floor(n/k_n)} P(Y_0 > u, Y_j > u)`` by importance sampling.

    ``x_0`` is drawn uniformly in ``U = {Y > u}`` and weighted by the
    closed-form density, and the last step of each return is replaced by its
    conditional probability given the previous state.
    """
    J = _block_count(n, k_n)
    region = obs.region(u).intersect(fmap.domain)
    if region.is_empty() or J == 0:
        return ReturnSum(0.0, 0.0, MONTE_CARLO, J)
    noise = NoiseParams(epsilon)
    nxt = _NextVisitProbability(fmap, epsilon, region)
    vals, x0 = _traces(fmap, noise, J - 1, budget, seed, [nxt], start=("inside", region), workers=workers)
    h, _ = closed_form_density_many(fmap, epsilon, x0)
    per = region.measure() * h * vals[0].sum(axis=1)
    m, se = _mean_se(per)
    return ReturnSum(n * m, n * se, MONTE_CARLO, J)


def cluster_return_sum(
    fmap: PiecewiseMap,
    epsilon: float,
    region: Region,
    n: int,
    k_n: float,
    budget: int,
    seed: int = 0,
    workers: int = 1,
) -> ReturnSum:
    """``n sum_{j=2}^{floor(n/k_n)-1} P(A ∩ T^-j A)`` for ``A = {x_0 in U, x_1 not in U}``.

    Needs ``f(U) ⊆ U``: then ``A`` forces a reset at the first step, so
    ``P(A) = eps mu(U) m(U^c)`` exactly and ``x_1`` is uniform on ``U^c``
    given ``A``.  The sum is estimated from orbits started there.
    """
    J = _block_count(n, k_n)
    region = region.intersect(fmap.domain)
    if region.is_empty() or J - 1 < 2:
        return ReturnSum(0.0, 0.0, MONTE_CARLO, max(J - 2, 0))
    if not is_forward_invariant(fmap, region):
        raise AssumptionViolated("f(U) is not contained in U")
    mU = region.measure()
    pA = epsilon * closed_form_measure(fmap, epsilon, region).value * (1.0 - mU)
    noise = NoiseParams(epsilon)
    # x_1 is the start; event A at time j means x_j in U and x_{j+1} outside
    vals, _ = _traces(fmap, noise, J - 1, budget, seed, [Indicator(region)], start=("outside", region), workers=workers)
    hits = vals[0][:, 1:J]
    per = hits.sum(axis=1) * epsilon * (1.0 - mU)
    m, se = _mean_se(per)
    return ReturnSum(n * pA * m, n * pA * se, MONTE_CARLO, J - 2)


class ClusterRatio(NamedTuple):
    ratio: float
    stderr: float
    reference: float
    p_event: float
    p_region: float


def cluster_probability_ratio(
    fmap: PiecewiseMap,
    epsilon: float,
    region: Region,
    budget: int,
    seed: int = 0,
    burn_in: Optional[int] = None,
    workers: int = 1,
) -> ClusterRatio:
    """``P(A^(1)) / P(U)`` from stationary pairs ``(x_0, x_1)`` against ``eps m(U^c)``."""
    vals, _ = _traces(fmap, NoiseParams(epsilon), 1, budget, seed, [Indicator(region)], burn_in=burn_in, workers=workers)
    inside = vals[0]
    a = inside[:, 0] * (1.0 - inside[:, 1])
    u = inside[:, 0]
    ma, mu = a.mean(), u.mean()
    if mu == 0:
        raise ConfigError("no stationary samples fell in U; increase the budget", "budget")
    ratio = ma / mu
    N = len(u)
    se = float(np.std(a - ratio * u, ddof=1) / (mu * math.sqrt(N)))
    return ClusterRatio(float(ratio), se, epsilon * (1.0 - region.intersect(fmap.domain).measure()), float(ma), float(mu))


# ------------------------------------------------------------------ tables
TABLE_COLUMNS = ("quantity", "parameters", "estimate", "stderr", "reference")


def write_table(path, rows, header: str = ""):
    """CSV of ``(quantity, parameters, estimate, stderr, reference)`` rows."""
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(header + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE_COLUMNS)
        for row in rows:
            w.writerow(row)
