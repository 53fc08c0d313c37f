"""Randomly applied stochastic perturbations of a piecewise map.

At every step the state is sent through the map with probability
``1 - epsilon``, or reset to a uniform point of the cube with probability
``epsilon``.  All randomness comes from :mod:`rasp_evt.rng`, keyed by
(seed, stream index, step), so a stream reproduces bit for bit whether it is
simulated alone, in a vectorised batch, or in a worker process.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Iterator, Optional

import numpy as np

from .errors import BatchError, ConfigError, PreconditionError, SingularHit
from .maps import PiecewiseMap
from .rng import SLOTS, CounterStream, StreamBatch, uniforms_over_steps

MAP_APPLIED = "M"
RESET = "R"
DEFAULT_CHUNK = 1 << 16
TAIL = 2.0 ** -53


@dataclass(frozen=True)
class NoiseParams:
    """Reset probability; the reset law is uniform on the cube."""

    epsilon: float

    def __post_init__(self):
        eps = float(self.epsilon)
        if not (0.0 < eps < 1.0) or not math.isfinite(eps):
            raise ConfigError(f"must lie in (0, 1), got {self.epsilon}", "epsilon")
        object.__setattr__(self, "epsilon", eps)

    @property
    def default_burn_in(self) -> int:
        return default_burn_in(self.epsilon)


def default_burn_in(epsilon: float, tv: float = 1e-6) -> int:
    """Smallest ``b`` with ``(1 - epsilon)^b < tv``."""
    b = math.ceil(math.log(tv) / math.log1p(-epsilon))
    while (1.0 - epsilon) ** b >= tv:
        b += 1
    return max(b, 0)


def tv_bound(epsilon: float, burn_in: int) -> float:
    """Total-variation distance to the stationary law after ``burn_in`` steps."""
    return (1.0 - epsilon) ** burn_in


@dataclass(frozen=True)
class StepEvent:
    kind: str
    reset_point: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in (MAP_APPLIED, RESET):
            raise ValueError(f"unknown event kind {self.kind!r}")
        if (self.kind == RESET) != (self.reset_point is not None):
            raise ValueError("reset_point is present iff the event is a reset")


@dataclass
class RandomOrbit:
    """States ``x_0..x_n`` and the reset flag of each of the ``n`` steps."""

    states: np.ndarray
    resets: np.ndarray
    seed: Optional[int] = None
    stream_index: Optional[int] = None

    @property
    def n(self) -> int:
        return len(self.resets)

    @property
    def events(self) -> list:
        return [
            StepEvent(RESET, self.states[k + 1]) if r else StepEvent(MAP_APPLIED)
            for k, r in enumerate(self.resets)
        ]

    def to_rows(self):
        """Rows ``(step, x_1..x_D, event)``; the event is the one that produced the state."""
        rows = []
        for k, x in enumerate(self.states):
            ev = "" if k == 0 else (RESET if self.resets[k - 1] else MAP_APPLIED)
            rows.append((k, *x.tolist(), ev))
        return rows


# ------------------------------------------------------------------ one step
def _draw_reset_point(fmap: PiecewiseMap, stream, step: int) -> np.ndarray:
    attempt = 0
    while True:
        xi = np.atleast_1d(stream.point(step, fmap.dim, attempt))
        if (fmap.piece_indices(xi) >= 0)[0]:
            return xi
        attempt += 1


def step(fmap: PiecewiseMap, noise: NoiseParams, x, stream, step_index: int = 0):
    """One RASP transition of the point ``x``.

    ``stream`` is any object with ``is_reset(step, eps)`` and
    ``point(step, dim, attempt)``.  Returns ``(next_point, StepEvent)``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if stream.is_reset(step_index, noise.epsilon):
        xi = _draw_reset_point(fmap, stream, step_index)
        return xi, StepEvent(RESET, xi)
    try:
        i = fmap.piece_index(x)
    except SingularHit as exc:
        raise SingularHit(x.tolist(), f"orbit reached the singular set at step {step_index}") from exc
    y = fmap.pieces[i].apply(x)
    S = fmap.expansion_factors()
    if S is not None:
        u = np.array([stream.refresh(step_index, d) for d in range(fmap.dim)])
        y = _refill(y[None, :], S[[i]], u[None, :], fmap.pieces, np.array([i]))[0]
    return y, StepEvent(MAP_APPLIED)


def _refill(Y, S, U, pieces, idx):
    """Add the image of the unrepresented tail of the argument on expanding axes.

    A double keeps 53 bits; an expanding branch shifts the top ones out and
    would otherwise fill the bottom with zeros, so orbits of the expanding
    coordinate collapse onto dyadic points after about 53 map steps.  The
    tail is uniform given the stored bits, so it is redrawn as
    ``u * 2^-53`` and pushed through the branch.  Results leaving the open
    image box keep the unperturbed value.
    """
    Z = Y + S * U * TAIL
    lo = np.array([p.image.lo for p in pieces])[idx]
    hi = np.array([p.image.hi for p in pieces])[idx]
    ok = (Z < hi) & (Z > lo)
    return np.where(ok, Z, Y)


# ------------------------------------------------------- vectorised engine
def draw_points(fmap: PiecewiseMap, batch: StreamBatch, step_index: int, rows) -> np.ndarray:
    """Uniform reset points for ``rows`` of ``batch``, re-drawn off the singular set."""
    rows = np.asarray(rows)
    pts = batch.points(step_index, fmap.dim, rows)
    bad = np.flatnonzero(fmap.piece_indices(pts) < 0)
    attempt = 0
    while bad.size:
        attempt += 1
        pts[bad] = batch.points(step_index, fmap.dim, rows[bad], attempt=attempt)
        bad = bad[fmap.piece_indices(pts[bad]) < 0]
    return pts


def advance(fmap: PiecewiseMap, epsilon: float, X: np.ndarray, batch: StreamBatch, step_index: int):
    """Advance every stream of ``batch`` by one step; returns ``(X_next, reset_flags)``."""
    reset = batch.resets(step_index, epsilon)
    idx = fmap.piece_indices(X)
    bad = ~reset & (idx < 0)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise SingularHit(
            X[i].tolist(),
            f"stream {int(batch.indices[i])} reached the singular set at step {step_index}",
        )
    Y, _ = fmap.evaluate_many(X, np.where(reset, -1, idx))
    S = fmap.expansion_factors()
    m = np.flatnonzero(~reset)
    if S is not None and m.size:
        U = np.column_stack([batch.refresh(step_index, d, m) for d in range(fmap.dim)])
        Y[m] = _refill(Y[m], S[idx[m]], U, fmap.pieces, idx[m])
    r = np.flatnonzero(reset)
    if r.size:
        Y[r] = draw_points(fmap, batch, step_index, r)
    return Y, reset


def initial_uniform(fmap: PiecewiseMap, batch: StreamBatch) -> np.ndarray:
    """Uniform starting points (drawn at the reserved step ``-1``)."""
    return draw_points(fmap, batch, -1, np.arange(len(batch)))


def iterate_states(
    fmap: PiecewiseMap,
    noise: NoiseParams,
    batch: StreamBatch,
    n_obs: int,
    burn_in: int = 0,
    x0: Optional[np.ndarray] = None,
) -> Iterator:
    """Yield ``(t, X_t, resets_into_t)`` for ``t = 0..n_obs-1`` after ``burn_in`` steps.

    Without ``x0`` every stream starts from its own uniform draw.
    ``resets_into_t`` is ``None`` at ``t = 0``.
    """
    if x0 is None:
        X = initial_uniform(fmap, batch)
    else:
        X = np.array(np.broadcast_to(np.asarray(x0, dtype=float), (len(batch), fmap.dim)))
    eps = noise.epsilon
    for k in range(burn_in):
        X, _ = advance(fmap, eps, X, batch, k)
    reset = None
    for t in range(n_obs):
        if t > 0:
            X, reset = advance(fmap, eps, X, batch, burn_in + t - 1)
        yield t, X, reset


# ---------------------------------------------------------------- orbits
def orbit(fmap: PiecewiseMap, noise: NoiseParams, x0, n: int, seed: int, stream_index: int = 0) -> RandomOrbit:
    """Random orbit of length ``n`` from ``x0`` on stream ``(seed, stream_index)``."""
    if n < 1:
        raise ConfigError("orbit length must be at least 1", "n")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    try:
        fmap.piece_index(x0)
    except SingularHit as exc:
        raise PreconditionError("the starting point lies on the singular set") from exc
    batch = StreamBatch(seed, [stream_index])
    if fmap.is_box_affine:
        states, resets = _orbit_scalar(fmap, noise.epsilon, x0, n, batch)
        return RandomOrbit(states, resets, int(seed), int(stream_index))
    states = np.empty((n + 1, fmap.dim))
    resets = np.empty(n, dtype=bool)
    for t, X, r in iterate_states(fmap, noise, batch, n + 1, 0, x0[None, :]):
        states[t] = X[0]
        if r is not None:
            resets[t - 1] = r[0]
    return RandomOrbit(states, resets, int(seed), int(stream_index))


def _orbit_scalar(fmap: PiecewiseMap, eps: float, x0: np.ndarray, n: int, batch: StreamBatch):
    """Single-stream orbit of a diagonal affine map.

    The stream's draws are generated for all steps at once and the map is
    applied in scalar arithmetic, which rounds exactly like the vectorised
    engine for diagonal branches.
    """
    D = fmap.dim
    key = batch.keys[0]
    steps = np.arange(n)
    resets = uniforms_over_steps(key, steps, 0) < eps
    r_idx = np.flatnonzero(resets)
    pts = np.column_stack([uniforms_over_steps(key, r_idx, 1 + d) for d in range(D)]) if r_idx.size else np.empty((0, D))
    bad = np.flatnonzero(fmap.piece_indices(pts) < 0) if r_idx.size else ()
    for j in bad:
        pts[j] = draw_points(fmap, batch, int(r_idx[j]), [0])[0]
    S = fmap.expansion_factors()
    refresh = None
    if S is not None:
        refresh = np.column_stack([uniforms_over_steps(key, steps, SLOTS - 1 - d) for d in range(D)]).tolist()
    pieces = []
    for p in fmap.pieces:
        b, img = p.region, p.image
        pieces.append((
            b.lo, b.hi, b.lo_closed, b.hi_closed,
            np.diag(p.matrix).tolist(), p.offset.tolist(), img.lo, img.hi,
        ))
    scale = S.tolist() if S is not None else None
    out = np.empty((n + 1, D))
    out[0] = x0
    out[1:][resets] = pts
    x = x0.tolist()
    reset_list = resets.tolist()
    for k in range(n):
        if reset_list[k]:
            x = out[k + 1].tolist()
            continue
        for i, (lo, hi, lc, hc, a, c, ilo, ihi) in enumerate(pieces):
            if all(
                (l <= v if lcl else l < v) and (v <= h if hcl else v < h)
                for v, l, h, lcl, hcl in zip(x, lo, hi, lc, hc)
            ):
                break
        else:
            raise SingularHit(x, f"orbit reached the singular set at step {k}")
        y = [ad * v + cd for ad, v, cd in zip(a, x, c)]
        if scale is not None:
            u = refresh[k]
            for d in range(D):
                s = scale[i][d]
                if s:
                    z = y[d] + s * u[d] * TAIL
                    if ilo[d] < z < ihi[d]:
                        y[d] = z
        out[k + 1] = y
        x = y
    return out, resets


def orbit_stepwise(fmap, noise, x0, n, seed, stream_index=0) -> RandomOrbit:
    """Same orbit as :func:`orbit`, built one :func:`step` at a time."""
    stream = CounterStream(seed, stream_index)
    x = np.atleast_1d(np.asarray(x0, dtype=float))
    states = [x]
    resets = []
    for k in range(n):
        x, ev = step(fmap, noise, x, stream, k)
        states.append(x)
        resets.append(ev.kind == RESET)
    return RandomOrbit(np.array(states), np.array(resets), int(seed), int(stream_index))


def sample_stationary(fmap, noise, burn_in=None, seed=0, stream_index=0) -> np.ndarray:
    """Endpoint of a ``burn_in``-step orbit from a uniform start (approximately stationary)."""
    return sample_stationary_many(fmap, noise, 1, burn_in, seed, first_stream=stream_index)[0]


def _stationary_chunk(fmap, noise, burn_in, seed, indices):
    batch = StreamBatch(seed, indices)
    X = None
    for _, X, _ in iterate_states(fmap, noise, batch, 1, burn_in):
        pass
    return X


def sample_stationary_many(
    fmap: PiecewiseMap,
    noise: NoiseParams,
    count: int,
    burn_in: Optional[int] = None,
    seed: int = 0,
    first_stream: int = 0,
    workers: int = 1,
    chunk: int = DEFAULT_CHUNK,
) -> np.ndarray:
    """``count`` approximately stationary points, one per stream index."""
    if count < 1:
        raise ConfigError("count must be at least 1", "count")
    if burn_in is None:
        burn_in = noise.default_burn_in
    indices = np.arange(first_stream, first_stream + count)
    func = partial(_stationary_chunk, fmap, noise, int(burn_in), int(seed))
    return np.concatenate(map_chunks(func, indices, workers, chunk))


# ---------------------------------------------------------------- batches
def map_chunks(func: Callable, indices: np.ndarray, workers: int = 1, chunk: int = DEFAULT_CHUNK) -> list:
    """Apply ``func`` to consecutive chunks of stream indices, results in chunk order."""
    if workers < 1:
        raise ConfigError("workers must be at least 1", "workers")
    chunks = [indices[i:i + chunk] for i in range(0, len(indices), chunk)]
    if workers == 1:
        return [func(c) for c in chunks]
    if len(chunks) < workers:
        size = max(1, math.ceil(len(indices) / workers))
        chunks = [indices[i:i + size] for i in range(0, len(indices), size)]
    try:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(func, chunks))
    except (MemoryError, OSError) as exc:
        raise BatchError(f"batch failed, partial results discarded: {exc}") from exc


@dataclass
class OrbitSummary:
    """Per-stream digest of a batch orbit."""

    stream_index: int
    n: int
    reset_count: int
    final_state: np.ndarray
    exceedances: Optional[np.ndarray] = field(default=None, repr=False)

    def to_record(self) -> dict:
        rec = {
            "n": self.n,
            "reset_count": self.reset_count,
            "final_state": self.final_state.tolist(),
        }
        if self.exceedances is not None:
            rec["exceedances"] = self.exceedances.astype(int).tolist()
        return rec


def _batch_chunk(fmap, noise, n, burn_in, seed, observable, threshold, indices):
    batch = StreamBatch(seed, indices)
    counts = np.zeros(len(indices), dtype=np.int64)
    exc = None
    if observable is not None:
        exc = np.zeros((len(indices), n), dtype=bool)
    X = None
    for t, X, r in iterate_states(fmap, noise, batch, n, burn_in):
        if r is not None:
            counts += r
        if exc is not None:
            exc[:, t] = observable(X) > threshold
    return counts, X, exc


def batch_orbits(
    fmap: PiecewiseMap,
    noise: NoiseParams,
    count: int,
    n: int,
    burn_in: int = 0,
    seed: int = 0,
    workers: int = 1,
    observable=None,
    threshold: float = np.inf,
    chunk: int = DEFAULT_CHUNK,
) -> list:
    """``count`` independent orbits on stream indices ``0..count-1``.

    Each orbit starts from a uniform draw, runs ``burn_in`` steps, then
    ``n`` observed states.  With an ``observable`` the summaries carry the
    exceedance indicator sequence ``observable(x_t) > threshold``.
    """
    if count < 1:
        raise ConfigError("count must be at least 1", "count")
    if n < 1:
        raise ConfigError("n must be at least 1", "n")
    func = partial(_batch_chunk, fmap, noise, int(n), int(burn_in), int(seed), observable, threshold)
    parts = map_chunks(func, np.arange(count), workers, chunk)
    out = []
    base = 0
    for counts, X, exc in parts:
        for j in range(len(counts)):
            out.append(
                OrbitSummary(
                    base + j,
                    n,
                    int(counts[j]),
                    X[j].copy(),
                    None if exc is None else exc[j].copy(),
                )
            )
        base += len(counts)
    return out


def empirical_transition(fmap, noise, x, box, trials: int, seed: int = 0):
    """Fraction of one-step transitions from ``x`` that land in ``box``, with its standard error."""
    batch = StreamBatch(seed, np.arange(trials))
    X = np.broadcast_to(np.atleast_1d(np.asarray(x, dtype=float)), (trials, fmap.dim)).copy()
    Y, _ = advance(fmap, noise.epsilon, X, batch, 0)
    p = float(np.mean(box.contains_many(Y)))
    return p, math.sqrt(max(p * (1 - p), 1e-300) / trials)


def transition_probability(fmap, noise, x, box) -> float:
    """Exact ``L_eps(x, A) = (1 - eps) 1_A(f(x)) + eps m(A)`` for a box ``A`` inside the cube."""
    eps = noise.epsilon
    hit = float(box.contains(fmap.evaluate(x)))
    return (1.0 - eps) * hit + eps * box.intersect(fmap.domain).measure()
