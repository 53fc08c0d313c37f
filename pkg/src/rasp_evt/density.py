"""Stationary density of the perturbed map, computed three independent ways.

* closed form: the series of ``J_k`` over the nested image sets, evaluated
  pointwise by walking backward orbits and integrated exactly over boxes by a
  pruned traversal of the tree of image boxes;
* Ulam: exact box-pullback discretisation of the transfer operator on a
  dyadic grid, then the geometric series of the perturbed operator;
* histogram of stationary samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
import scipy.sparse as sp

from .boxes import Box, Region
from .errors import BoundaryError, CapabilityError, ConfigError
from .maps import PiecewiseMap

CLOSED_FORM = "ClosedForm"
ULAM = "UlamVector"
HISTOGRAM = "Histogram"


def truncation_depth(epsilon: float, tol: float) -> int:
    """Smallest ``K`` with ``(1 - epsilon)^(K+1) <= tol``."""
    if tol <= 0:
        raise ConfigError("tolerance must be positive", "tol")
    if tol >= 1:
        return 0
    K = max(0, math.ceil(math.log(tol) / math.log1p(-epsilon)) - 1)
    while (1.0 - epsilon) ** (K + 1) > tol:
        K += 1
    return K


def series_terms(epsilon: float, tol: float) -> int:
    """``K = ceil(log(tol) / log(1 - epsilon))`` for the Ulam series."""
    return max(0, math.ceil(math.log(tol) / math.log1p(-epsilon)))


# ------------------------------------------------------------ pointwise form
def closed_form_density_many(fmap: PiecewiseMap, epsilon: float, X, K: Optional[int] = None, tol: float = 1e-15):
    """Closed-form density at each row of ``X``.

    Returns ``(values, boundary)``; ``boundary`` flags points on the boundary
    of some image set, where the value is not defined.
    """
    if K is None:
        K = truncation_depth(epsilon, tol)
    depth, jac, boundary = fmap.backward_depth_many(X, K)
    weights = epsilon * (1.0 - epsilon) ** np.arange(K + 1)
    terms = weights[:, None] * jac
    mask = np.arange(K + 1)[:, None] <= depth[None, :]
    return np.sum(np.where(mask, terms, 0.0), axis=0), boundary


def closed_form_density(fmap: PiecewiseMap, epsilon: float, x, K: Optional[int] = None, tol: float = 1e-15) -> float:
    """``eps * sum_{k<=K} (1-eps)^k J_k(x) 1_{Lambda_k}(x)``.

    On ``Lambda_p`` minus ``Lambda_{p+1}`` with ``p <= K`` this is the exact
    finite sum.  Raises :class:`BoundaryError` on image-set boundaries.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    fmap._point(x)
    vals, boundary = closed_form_density_many(fmap, epsilon, x[None, :], K, tol)
    if boundary[0]:
        raise BoundaryError(f"density undefined at boundary point {x.tolist()}")
    return float(vals[0])


def stratum(fmap: PiecewiseMap, x, max_depth: int = 256) -> int:
    """``p`` with ``x`` in ``Lambda_p`` but not ``Lambda_{p+1}`` (capped at ``max_depth``)."""
    depth, _, boundary = fmap.backward_depth_many(np.atleast_1d(np.asarray(x, dtype=float))[None, :], max_depth)
    if boundary[0]:
        raise BoundaryError(f"point {np.asarray(x).tolist()} lies on the boundary of some Lambda_k")
    return int(depth[0])


class ContractionCheck(NamedTuple):
    holds: bool
    lam: float


def check_contraction_condition(fmap: PiecewiseMap, epsilon: float) -> ContractionCheck:
    """Largest inverse determinant ``lambda`` and whether ``lambda < 1/(1-eps)``."""
    if not fmap.is_affine:
        raise CapabilityError("needs constant Jacobians per piece")
    lam = max(p.det_inv for p in fmap.pieces)
    return ContractionCheck(lam * (1.0 - epsilon) < 1.0, lam)


# ------------------------------------------------------------ tree traversal
class MeasureEstimate(NamedTuple):
    value: float
    error: float


def _piece_arrays(fmap: PiecewiseMap):
    fmap._require_box_affine()
    out = []
    for p in fmap.pieces:
        out.append((
            np.array(p.region.lo), np.array(p.region.hi),
            np.diag(p.matrix).copy(), p.offset.copy(), p.det_inv,
        ))
    return out


def _children(pieces, lo, hi):
    for plo, phi, s, c, dj in pieces:
        a = np.maximum(lo, plo)
        b = np.minimum(hi, phi)
        if np.all(b > a):
            u, v = s * a + c, s * b + c
            yield np.minimum(u, v), np.maximum(u, v), dj


def _traverse(fmap, epsilon, tol, node_tol, max_nodes, on_node):
    """Depth-first walk over image boxes with constant ``J`` on each.

    ``on_node(lo, hi, w)`` receives the weight ``w = (1-eps)^k J`` and returns
    ``(overlap_done, subtree_inside)``: whether the node is fully settled and
    whether recursion is needed.  See :func:`closed_form_measure`.
    """
    K = truncation_depth(epsilon, tol)
    pieces = _piece_arrays(fmap)
    stack = [(np.zeros(fmap.dim), np.ones(fmap.dim), 1.0, 0)]
    visited = 0
    error = 0.0
    while stack:
        lo, hi, J, k = stack.pop()
        visited += 1
        if visited > max_nodes:
            raise CapabilityError(f"closed-form traversal exceeded {max_nodes} nodes; raise node_tol")
        w = (1.0 - epsilon) ** k * J
        recurse = on_node(lo, hi, w, False)
        if not recurse:
            continue
        rest = (1.0 - epsilon) * w * float(np.prod(hi - lo))
        if k >= K or rest < node_tol:
            on_node(lo, hi, w, True)
            error += rest
            continue
        for clo, chi, dj in _children(pieces, lo, hi):
            stack.append((clo, chi, J * dj, k + 1))
    return error, visited


def _overlap(lo, hi, blo, bhi) -> float:
    return float(np.prod(np.clip(np.minimum(hi, bhi) - np.maximum(lo, blo), 0.0, None)))


def closed_form_measure(
    fmap: PiecewiseMap,
    epsilon: float,
    region,
    tol: float = 1e-14,
    node_tol: float = 0.0,
    max_nodes: int = 2_000_000,
) -> MeasureEstimate:
    """``mu_eps(region)`` integrated exactly stratum by stratum.

    A node of the image tree that lies inside the region contributes its whole
    subtree, ``(1-eps)^k J m(B)``, in one step (transfer operators preserve
    mass), so only nodes straddling the region boundary are refined.  Nodes
    below ``tol``-depth or ``node_tol`` mass are closed with their remaining
    mass spread uniformly and counted in the returned error bound.
    """
    if isinstance(region, Box):
        region = Region(fmap.dim, [region])
    boxes = [(np.array(b.lo), np.array(b.hi)) for b in region.intersect(fmap.domain)]
    if not boxes:
        return MeasureEstimate(0.0, 0.0)
    total = [0.0]

    def on_node(lo, hi, w, closing):
        mB = float(np.prod(hi - lo))
        if closing:
            ov = sum(_overlap(lo, hi, a, b) for a, b in boxes)
            total[0] += (1.0 - epsilon) * w * ov
            return False
        ov = 0.0
        for a, b in boxes:
            if np.all(lo >= a) and np.all(hi <= b):
                total[0] += w * mB
                return False
            ov += _overlap(lo, hi, a, b)
        if ov == 0.0:
            return False
        total[0] += epsilon * w * ov
        return True

    error, _ = _traverse(fmap, epsilon, tol, node_tol, max_nodes, on_node)
    return MeasureEstimate(total[0], error)


# ------------------------------------------------------------------- grids
@dataclass(frozen=True)
class Grid:
    """Regular dyadic grid with ``2^level`` cells per axis, C-ordered cell indices."""

    dim: int
    level: int

    @property
    def per_axis(self) -> int:
        return 1 << self.level

    @property
    def n_cells(self) -> int:
        return self.per_axis ** self.dim

    @property
    def cell_measure(self) -> float:
        return float(self.per_axis) ** (-self.dim)

    @property
    def shape(self) -> tuple:
        return (self.per_axis,) * self.dim

    def edges(self) -> np.ndarray:
        return np.arange(self.per_axis + 1) / self.per_axis

    def centers(self) -> np.ndarray:
        c = (np.arange(self.per_axis) + 0.5) / self.per_axis
        mesh = np.meshgrid(*([c] * self.dim), indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])

    def cell_box(self, index: int) -> Box:
        ijk = np.unravel_index(index, self.shape)
        lo = np.array(ijk) / self.per_axis
        return Box.open(lo, lo + 1.0 / self.per_axis)

    def locate(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        ijk = np.clip(np.floor(X * self.per_axis).astype(np.int64), 0, self.per_axis - 1)
        return np.ravel_multi_index(tuple(ijk.T), self.shape)

    def axis_overlaps(self, lo: float, hi: float):
        """First cell index and overlap lengths of ``(lo, hi)`` with the cells of one axis."""
        m = self.per_axis
        i0 = max(0, min(m - 1, int(math.floor(lo * m))))
        i1 = max(0, min(m - 1, int(math.ceil(hi * m)) - 1))
        e = np.arange(i0, i1 + 2) / m
        ov = np.clip(np.minimum(hi, e[1:]) - np.maximum(lo, e[:-1]), 0.0, None)
        return i0, ov

    def region_overlaps(self, region: Region) -> np.ndarray:
        """``m(cell ∩ region)`` for every cell."""
        out = np.zeros(self.shape)
        for b in region:
            idx, ovs = [], []
            for d in range(self.dim):
                i0, ov = self.axis_overlaps(max(b.lo[d], 0.0), min(b.hi[d], 1.0))
                idx.append(slice(i0, i0 + len(ov)))
                ovs.append(ov)
            block = ovs[0]
            for ov in ovs[1:]:
                block = np.multiply.outer(block, ov)
            out[tuple(idx)] += block
        return out.ravel()


def closed_form_cell_masses(
    fmap: PiecewiseMap,
    epsilon: float,
    level: int,
    tol: float = 1e-14,
    node_tol: float = 0.0,
    max_nodes: int = 2_000_000,
):
    """``mu_eps`` of every grid cell from the closed form; returns ``(masses, error_bound)``."""
    grid = Grid(fmap.dim, level)
    masses = np.zeros(grid.shape)

    def spread(lo, hi, weight):
        idx, ovs = [], []
        for d in range(fmap.dim):
            i0, ov = grid.axis_overlaps(lo[d], hi[d])
            idx.append(slice(i0, i0 + len(ov)))
            ovs.append(ov)
        block = ovs[0]
        for ov in ovs[1:]:
            block = np.multiply.outer(block, ov)
        masses[tuple(idx)] += weight * block
        return all(len(ov) == 1 for ov in ovs)

    def on_node(lo, hi, w, closing):
        if closing:
            spread(lo, hi, (1.0 - epsilon) * w)
            return False
        m = grid.per_axis
        single = all(
            math.floor(lo[d] * m) == math.ceil(hi[d] * m) - 1 or hi[d] - lo[d] == 0.0
            for d in range(fmap.dim)
        )
        if single:
            spread(lo, hi, w)
            return False
        spread(lo, hi, epsilon * w)
        return True

    error, _ = _traverse(fmap, epsilon, tol, node_tol, max_nodes, on_node)
    return masses.ravel(), error


def boundary_cells(fmap: PiecewiseMap, level: int, depth: int) -> np.ndarray:
    """Mask of cells whose interior meets the boundary of some ``Lambda_k``, ``k <= depth``."""
    grid = Grid(fmap.dim, level)
    chain = fmap.lambda_chain(depth=depth)
    m = grid.per_axis
    mask = np.zeros(grid.shape, dtype=bool)
    for k in range(1, chain.depth + 1):
        for b in chain[k]:
            for d in range(fmap.dim):
                for face in (b.lo[d], b.hi[d]):
                    t = face * m
                    if t == math.floor(t):
                        continue
                    lo = np.array(b.lo)
                    hi = np.array(b.hi)
                    lo[d] = hi[d] = face
                    idx = []
                    for e in range(fmap.dim):
                        i0 = max(0, min(m - 1, int(math.floor(lo[e] * m))))
                        i1 = max(0, min(m - 1, int(math.ceil(hi[e] * m)) - 1)) if e != d else i0
                        idx.append(slice(i0, i1 + 1))
                    mask[tuple(idx)] = True
    return mask.ravel()


# -------------------------------------------------------------------- Ulam
@dataclass(frozen=True, eq=False)
class UlamOperator:
    """Row-stochastic ``(1-eps) M + eps R`` on a dyadic grid.

    ``matrix`` is the sparse unperturbed part ``M_ij = m(C_i ∩ f^-1 C_j) / m(C_i)``;
    the rank-one reset part ``R`` (every row equal to the cell measures) is
    kept implicit and weighted by ``epsilon``.
    """

    grid: Grid
    matrix: sp.csr_matrix
    epsilon: float = 0.0

    @property
    def n_cells(self) -> int:
        return self.grid.n_cells

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.n_cells, self.grid.cell_measure)

    def dense(self) -> np.ndarray:
        M = (1.0 - self.epsilon) * self.matrix.toarray()
        if self.epsilon:
            M += self.epsilon * np.tile(self.weights, (self.n_cells, 1))
        return M

    def row_sums(self) -> np.ndarray:
        base = np.asarray(self.matrix.sum(axis=1)).ravel()
        return (1.0 - self.epsilon) * base + self.epsilon * self.weights.sum()

    def push_mass(self, pi: np.ndarray) -> np.ndarray:
        """Row vector of cell masses times the operator."""
        out = (1.0 - self.epsilon) * (self.matrix.T @ pi)
        if self.epsilon:
            out = out + self.epsilon * pi.sum() * self.weights
        return out

    def apply_density(self, psi: np.ndarray) -> np.ndarray:
        """Transfer operator on per-cell density values."""
        w = self.grid.cell_measure
        return self.push_mass(np.asarray(psi, dtype=float) * w) / w

    def triplets(self):
        coo = self.dense_coo()
        return list(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()))

    def dense_coo(self):
        if self.epsilon:
            return sp.coo_matrix(self.dense())
        return self.matrix.tocoo()


def _axis_factor(grid: Grid, lo: float, hi: float, s: float, c: float) -> sp.csr_matrix:
    m = grid.per_axis
    e = grid.edges()
    rows, cols, vals = [], [], []
    for i in range(m):
        a, b = max(e[i], lo), min(e[i + 1], hi)
        if b <= a:
            continue
        u, v = s * a + c, s * b + c
        il, ih = min(u, v), max(u, v)
        j0, ov = grid.axis_overlaps(il, ih)
        scale = m / abs(s)
        for j, o in enumerate(ov):
            if o > 0:
                rows.append(i)
                cols.append(j0 + j)
                vals.append(o * scale)
    return sp.csr_matrix((vals, (rows, cols)), shape=(m, m))


def ulam_operator(fmap: PiecewiseMap, level: int) -> UlamOperator:
    """Exact Ulam matrix on ``2^level`` cells per axis.

    Pieces and branches factor over the axes, so each piece contributes a
    Kronecker product of one-dimensional overlap matrices.
    """
    if not fmap.is_box_affine:
        raise CapabilityError(f"{fmap.kind}: Ulam matrix needs diagonal affine pieces")
    if level < 0:
        raise ConfigError("grid level must be non-negative", "grid_level")
    grid = Grid(fmap.dim, level)
    total = None
    for p in fmap.pieces:
        s, c = np.diag(p.matrix), p.offset
        factor = None
        for d in range(fmap.dim):
            f = _axis_factor(grid, p.region.lo[d], p.region.hi[d], s[d], c[d])
            factor = f if factor is None else sp.kron(factor, f, format="csr")
        total = factor if total is None else total + factor
    return UlamOperator(grid, sp.csr_matrix(total))


def perturbed_operator(P: UlamOperator, epsilon: float) -> UlamOperator:
    """``(1-eps) M + eps R``; ``epsilon = 1`` is accepted (pure reset)."""
    if not (0.0 <= epsilon <= 1.0):
        raise ConfigError(f"must lie in [0, 1], got {epsilon}", "epsilon")
    return UlamOperator(P.grid, P.matrix, float(epsilon))


class IterateComparison(NamedTuple):
    iterated: np.ndarray
    formula: np.ndarray
    gap: float


def operator_iterates(P: UlamOperator, epsilon: float, psi, n: int) -> IterateComparison:
    """``P_eps^n psi`` by repetition and by the closed iterate formula.

    The formula is ``(1-eps)^n P^n psi + eps * mean(psi) * sum_{k<n} (1-eps)^k P^k 1``;
    densities are per-cell values.
    """
    base = UlamOperator(P.grid, P.matrix, 0.0)
    pert = perturbed_operator(P, epsilon)
    psi = np.asarray(psi, dtype=float)
    if psi.shape == ():
        psi = np.full(P.n_cells, float(psi))
    lhs = psi.copy()
    for _ in range(n):
        lhs = pert.apply_density(lhs)
    Pn_psi = psi.copy()
    Pk_one = np.ones(P.n_cells)
    acc = np.zeros(P.n_cells)
    for k in range(n):
        acc += (1.0 - epsilon) ** k * Pk_one
        Pk_one = base.apply_density(Pk_one)
        Pn_psi = base.apply_density(Pn_psi)
    mean = float(np.sum(psi) * P.grid.cell_measure)
    rhs = (1.0 - epsilon) ** n * Pn_psi + epsilon * mean * acc
    gap = float(np.max(np.abs(lhs - rhs))) if n else 0.0
    return IterateComparison(lhs, rhs, gap)


# --------------------------------------------------------------- profiles
@dataclass(eq=False)
class DensityProfile:
    """Stationary density in one of three representations."""

    kind: str
    dim: int
    grid: Optional[Grid] = None
    values: Optional[np.ndarray] = None
    stderr: Optional[np.ndarray] = None
    fmap: Optional[PiecewiseMap] = None
    epsilon: Optional[float] = None
    truncation: Optional[int] = None
    info: dict = field(default_factory=dict)

    def __call__(self, x) -> float:
        if self.kind == CLOSED_FORM:
            return closed_form_density(self.fmap, self.epsilon, x, self.truncation)
        return float(self.values[self.grid.locate(np.atleast_1d(x))[0]])

    def integral(self) -> float:
        if self.kind == CLOSED_FORM:
            return measure_of_region(self, Region.unit_cube(self.dim))
        return float(np.sum(self.values) * self.grid.cell_measure)

    def cell_averages(self, level: int) -> np.ndarray:
        """Average density over each cell of a dyadic grid."""
        grid = Grid(self.dim, level)
        if self.kind == CLOSED_FORM:
            masses, _ = closed_form_cell_masses(self.fmap, self.epsilon, level, self.info.get("tol", 1e-14))
            return masses / grid.cell_measure
        if grid == self.grid:
            return self.values.copy()
        raise CapabilityError("cell averages on a different grid are not supported for grid profiles")

    def rows(self):
        """CSV rows ``(center..., density, stderr)``."""
        if self.grid is None:
            raise CapabilityError("closed-form profiles have no cells; use cell_averages")
        centers = self.grid.centers()
        se = self.stderr if self.stderr is not None else np.full(len(self.values), np.nan)
        return [(*c.tolist(), float(v), float(s)) for c, v, s in zip(centers, self.values, se)]


def closed_form_profile(fmap: PiecewiseMap, epsilon: float, tol: float = 1e-14) -> DensityProfile:
    fmap._require_box_affine()
    return DensityProfile(
        CLOSED_FORM, fmap.dim, fmap=fmap, epsilon=float(epsilon),
        truncation=truncation_depth(epsilon, tol), info={"tol": tol},
    )


def stationary_density_series(P: UlamOperator, epsilon: float, tol: float = 1e-13) -> DensityProfile:
    """``eps * sum_{k<=K} (1-eps)^k P^k 1`` with ``K = ceil(log tol / log(1-eps))``."""
    if tol <= 0:
        raise ConfigError("tolerance must be positive", "tol")
    base = UlamOperator(P.grid, P.matrix, 0.0)
    K = series_terms(epsilon, tol)
    term = np.ones(P.n_cells)
    h = np.zeros(P.n_cells)
    for k in range(K + 1):
        h += epsilon * (1.0 - epsilon) ** k * term
        term = base.apply_density(term)
    pert = perturbed_operator(P, epsilon)
    residual = float(np.sum(np.abs(pert.apply_density(h) - h)) * P.grid.cell_measure)
    return DensityProfile(
        ULAM, P.grid.dim, grid=P.grid, values=h, epsilon=float(epsilon), truncation=K,
        info={"residual_l1": residual, "tail_bound": (1.0 - epsilon) ** (K + 1)},
    )


def empirical_density(samples, level: int) -> DensityProfile:
    """Histogram density with per-cell binomial standard errors."""
    X = np.asarray(samples, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if len(X) == 0:
        raise ConfigError("need at least one sample", "samples")
    grid = Grid(X.shape[1], level)
    counts = np.bincount(grid.locate(X), minlength=grid.n_cells).astype(float)
    N = len(X)
    p = counts / N
    vol = grid.cell_measure
    return DensityProfile(
        HISTOGRAM, grid.dim, grid=grid, values=p / vol,
        stderr=np.sqrt(p * (1.0 - p) / N) / vol, info={"n_samples": N},
    )


def measure_of_region(profile: DensityProfile, region) -> float:
    """``mu_eps(region)`` under the given density representation."""
    if isinstance(region, Box):
        region = Region(profile.dim, [region])
    if region.is_empty():
        return 0.0
    if profile.kind == CLOSED_FORM:
        return closed_form_measure(profile.fmap, profile.epsilon, region, profile.info.get("tol", 1e-14)).value
    ov = profile.grid.region_overlaps(region.intersect(Box.closed([0.0] * profile.dim, [1.0] * profile.dim)))
    return float(np.dot(profile.values, ov))
