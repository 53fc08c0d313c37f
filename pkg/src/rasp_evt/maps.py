"""Injective piecewise maps of the unit cube and their forward-image sets.

A map is a list of open, pairwise disjoint pieces whose closures tile
``[0, 1]^D``; each piece carries a branch that is a diffeomorphism onto its
image.  The singular set is everything that is not inside an open piece: the
cube boundary and the cuts between pieces.

For affine branches with diagonal linear part the images of boxes are boxes,
so the nested sets ``Lambda_{k+1} = f(Lambda_k minus singular set)`` and the
inverse-Jacobian products along backward orbits are computed exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .boxes import Box, Region
from .errors import (
    BoundaryError,
    CapabilityError,
    ConfigError,
    DomainError,
    PreconditionError,
    SingularHit,
)

DEFAULT_MAX_BOXES = 200_000


@dataclass(frozen=True, eq=False)
class AffinePiece:
    """Open box ``region`` with branch ``x -> matrix @ x + offset``."""

    region: Box
    matrix: np.ndarray
    offset: np.ndarray
    _inv: np.ndarray = field(init=False, repr=False)
    _det_inv: float = field(init=False, repr=False)
    _diagonal: bool = field(init=False, repr=False)
    _image: Optional[Box] = field(init=False, repr=False)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        c = np.atleast_1d(np.asarray(self.offset, dtype=float))
        det = float(np.linalg.det(A))
        if det == 0.0:
            raise ConfigError("branch matrix is singular")
        object.__setattr__(self, "matrix", A)
        object.__setattr__(self, "offset", c)
        object.__setattr__(self, "_inv", np.linalg.inv(A))
        object.__setattr__(self, "_det_inv", 1.0 / abs(det))
        diagonal = bool(np.all(A == np.diag(np.diag(A))))
        object.__setattr__(self, "_diagonal", diagonal)
        object.__setattr__(self, "_image", self.image_box(self.region) if diagonal else None)

    affine = True

    @property
    def det_inv(self) -> float:
        return self._det_inv

    @property
    def diagonal(self) -> bool:
        return self._diagonal

    @property
    def image(self) -> Box:
        """Open image box ``f(X_i)``."""
        if self._image is None:
            raise CapabilityError("image of a box is not a box for a non-diagonal branch")
        return self._image

    def apply(self, x):
        return self.matrix @ np.asarray(x, dtype=float) + self.offset

    def apply_many(self, X):
        return X @ self.matrix.T + self.offset

    def inverse(self, y):
        return self._inv @ (np.asarray(y, dtype=float) - self.offset)

    def inverse_many(self, Y):
        return (Y - self.offset) @ self._inv.T

    def det_inv_at(self, x) -> float:
        return self._det_inv

    def image_box(self, box: Box) -> Box:
        if not self._diagonal:
            raise CapabilityError("image of a box is not a box for a non-diagonal branch")
        return box.diagonal_image(np.diag(self.matrix), self.offset)


@dataclass(frozen=True, eq=False)
class SmoothPiece:
    """Open box with a general C1 branch; only pointwise operations are supported."""

    region: Box
    func: Callable
    jacobian: Callable

    affine = False
    diagonal = False

    def apply(self, x):
        return np.asarray(self.func(np.asarray(x, dtype=float)), dtype=float)

    def apply_many(self, X):
        return np.array([self.apply(x) for x in X])

    def det_inv_at(self, x) -> float:
        return 1.0 / abs(float(np.linalg.det(np.atleast_2d(self.jacobian(np.asarray(x, dtype=float))))))


@dataclass(frozen=True)
class LambdaChain:
    """Exact ``Lambda_0, ..., Lambda_depth`` as box unions.

    ``jacobians[k][i]`` is the constant value of ``J_k`` on ``sets[k].boxes[i]``.
    """

    sets: tuple
    jacobians: tuple
    depth: int

    def __getitem__(self, k) -> Region:
        return self.sets[k]

    def measures(self) -> list:
        return [r.measure() for r in self.sets]


@dataclass(frozen=True, eq=False)
class PiecewiseMap:
    """Piecewise map of ``[0, 1]^D`` (see module docstring)."""

    kind: str
    params: dict
    dim: int
    pieces: tuple
    contraction: Optional[float] = None
    injective: bool = True

    # ------------------------------------------------------------------ domain
    @property
    def domain(self) -> Box:
        return Box.closed([0.0] * self.dim, [1.0] * self.dim)

    @property
    def is_affine(self) -> bool:
        return all(p.affine for p in self.pieces)

    @property
    def is_box_affine(self) -> bool:
        return all(p.affine and p.diagonal for p in self.pieces)

    def expansion_factors(self) -> Optional[np.ndarray]:
        """``|A_ii|`` per piece and axis where it exceeds 1, else ``None`` (no expanding axis)."""
        if not self.is_box_affine:
            return None
        S = np.array([np.abs(np.diag(p.matrix)) for p in self.pieces])
        if not np.any(S > 1.0):
            return None
        return np.where(S > 1.0, S, 0.0)

    def _point(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != (self.dim,):
            raise DomainError(f"expected a point of dimension {self.dim}, got shape {x.shape}")
        if np.any(~np.isfinite(x)) or np.any(x < 0.0) or np.any(x > 1.0):
            raise DomainError(f"point {x.tolist()} is outside [0, 1]^{self.dim}")
        return x

    def _require_box_affine(self):
        if not self.is_box_affine:
            raise CapabilityError(f"{self.kind}: exact set computations need diagonal affine pieces")

    # --------------------------------------------------------------- pointwise
    def piece_index(self, x) -> int:
        """Index of the open piece containing ``x``; raises :class:`SingularHit` on the singular set."""
        x = self._point(x)
        for i, piece in enumerate(self.pieces):
            if piece.region.contains(x):
                return i
        raise SingularHit(x.tolist())

    def piece_indices(self, X) -> np.ndarray:
        """Vectorised :meth:`piece_index`; ``-1`` marks points of the singular set."""
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        idx = np.full(len(X), -1, dtype=np.int64)
        for i, piece in enumerate(self.pieces):
            idx[piece.region.contains_many(X)] = i
        return idx

    def evaluate(self, x) -> np.ndarray:
        x = self._point(x)
        return self.pieces[self.piece_index(x)].apply(x)

    def evaluate_many(self, X, idx=None):
        """Apply the map to each row of ``X``.

        Returns ``(images, idx)``; rows with ``idx == -1`` lie on the singular
        set and are returned unchanged.
        """
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        if idx is None:
            idx = self.piece_indices(X)
        out = X.copy()
        for i, piece in enumerate(self.pieces):
            sel = idx == i
            if np.any(sel):
                out[sel] = piece.apply_many(X[sel])
        return out, idx

    def evaluate_extended(self, x) -> np.ndarray:
        """``f(x)`` with points of the singular set sent through the first piece whose closure holds them."""
        x = self._point(x)
        for piece in self.pieces:
            if piece.region.contains(x):
                return piece.apply(x)
        for piece in self.pieces:
            if piece.region.closure().contains(x):
                return piece.apply(x)
        raise SingularHit(x.tolist())

    def jacobian_det_inv(self, x) -> float:
        x = self._point(x)
        return self.pieces[self.piece_index(x)].det_inv_at(x)

    # ---------------------------------------------------------- backward orbit
    def backward_step(self, y):
        """Unique preimage of ``y`` under the open branches.

        Returns ``(piece_index, preimage)``, or ``None`` when ``y`` is outside
        ``Lambda_1``.  Raises :class:`BoundaryError` if ``y`` lies on the
        boundary of some branch image.
        """
        self._require_box_affine()
        y = np.asarray(y, dtype=float)
        for i, piece in enumerate(self.pieces):
            if piece.image.contains(y):
                return i, piece.inverse(y)
        for piece in self.pieces:
            if piece.image.closure().contains(y):
                raise BoundaryError(f"point {y.tolist()} lies on the boundary of a branch image")
        return None

    def backward_depth(self, y, max_depth: int):
        """Walk backwards from ``y`` for at most ``max_depth`` steps.

        Returns ``(p, J)`` where ``p`` is the number of steps taken (so ``y`` is
        in ``Lambda_p`` and, if ``p < max_depth``, not in ``Lambda_{p+1}``) and
        ``J[k]`` is ``J_k(y)`` for ``k = 0..p``.
        """
        y = self._point(y)
        jac = [1.0]
        for _ in range(max_depth):
            step = self.backward_step(y)
            if step is None:
                break
            i, y = step
            jac.append(jac[-1] * self.pieces[i].det_inv)
        return len(jac) - 1, jac

    def backward_depth_many(self, Y, max_depth: int):
        """Vectorised :meth:`backward_depth` returning depth and ``J`` arrays.

        ``boundary`` flags points whose walk touches the boundary of a branch
        image (density undefined there).
        """
        self._require_box_affine()
        Y = np.array(Y, dtype=float).reshape(-1, self.dim)
        n = len(Y)
        depth = np.zeros(n, dtype=np.int64)
        boundary = np.zeros(n, dtype=bool)
        alive = np.ones(n, dtype=bool)
        jac = np.ones((max_depth + 1, n))
        for k in range(1, max_depth + 1):
            if not np.any(alive):
                jac[k:] = jac[k - 1]
                break
            rows = np.flatnonzero(alive)
            pts = Y[rows]
            found = np.zeros(len(rows), dtype=bool)
            factor = np.ones(len(rows))
            for piece in self.pieces:
                hit = piece.image.contains_many(pts) & ~found
                if np.any(hit):
                    pts[hit] = piece.inverse_many(pts[hit])
                    factor[hit] = piece.det_inv
                    found |= hit
            edge = np.zeros(len(rows), dtype=bool)
            for piece in self.pieces:
                edge |= piece.image.closure().contains_many(pts) & ~found
            boundary[rows[edge]] = True
            Y[rows] = pts
            jac[k] = jac[k - 1]
            jac[k, rows] = jac[k - 1, rows] * np.where(found, factor, 1.0)
            depth[rows[found]] = k
            alive[rows[~found]] = False
        return depth, jac, boundary

    def j_k(self, x, k: int) -> float:
        """``J_k(x)``: product of inverse Jacobian determinants along the backward orbit."""
        if k < 0:
            raise ConfigError("k must be non-negative", "k")
        if k == 0:
            self._point(x)
            return 1.0
        p, jac = self.backward_depth(x, k)
        if p < k:
            raise PreconditionError(f"point is not in Lambda_{k}")
        return jac[k]

    # ---------------------------------------------------------------- set maps
    def singular_set(self) -> Region:
        """The singular set as a union of closed degenerate boxes."""
        return Region(self.dim, [self.domain]).difference(Region(self.dim, [p.region for p in self.pieces]))

    def image_of_open(self, region: Region) -> Region:
        """``f(region minus singular set)`` using the open branches only."""
        self._require_box_affine()
        out = []
        for box in region:
            for piece in self.pieces:
                part = box.intersect(piece.region)
                if not part.is_empty():
                    out.append(piece.image_box(part))
        return Region(self.dim, out, disjoint=True)

    def image_extended(self, region: Region) -> Region:
        """Image of an arbitrary region, defining ``f`` on the singular set.

        A point of the singular set is sent through the branch of the first
        piece (in index order) whose closure contains it.
        """
        self._require_box_affine()
        out = []
        for box in region:
            remaining = [box]
            for piece in self.pieces:
                cl = piece.region.closure()
                nxt = []
                for b in remaining:
                    part = b.intersect(cl)
                    if not part.is_empty():
                        out.append(piece.image_box(part))
                    nxt.extend(b.difference(cl))
                remaining = nxt
        return Region(self.dim, out)

    def singular_images(self, p: int) -> Region:
        """``f^p(singular set)`` under the extended map."""
        region = self.singular_set()
        for _ in range(p):
            region = self.image_extended(region)
        return region

    def lambda_chain(self, depth: Optional[int] = None, max_boxes: int = DEFAULT_MAX_BOXES) -> LambdaChain:
        """Exact ``Lambda_k`` up to ``depth``.

        Without an explicit depth, stops at the first ``k`` with
        ``m(Lambda_k) < 1e-9``, at ``k = 64``, or before the box count would
        exceed ``max_boxes``.
        """
        self._require_box_affine()
        auto = depth is None
        limit = 64 if auto else int(depth)
        if limit < 0:
            raise ConfigError("depth must be non-negative", "depth")
        sets = [Region(self.dim, [self.domain], disjoint=True)]
        jacs = [np.ones(1)]
        boxes, J = [self.domain], [1.0]
        k = 0
        while k < limit:
            if auto and sets[-1].measure() < 1e-9:
                break
            nb, nj = [], []
            for box, jv in zip(boxes, J):
                for piece in self.pieces:
                    part = box.intersect(piece.region)
                    if not part.is_empty():
                        nb.append(piece.image_box(part))
                        nj.append(jv * piece.det_inv)
            if len(nb) > max_boxes:
                if auto:
                    break
                raise CapabilityError(f"Lambda_{k + 1} needs {len(nb)} boxes (budget {max_boxes})")
            boxes, J = nb, nj
            sets.append(Region(self.dim, boxes, disjoint=True))
            jacs.append(np.asarray(J))
            k += 1
        return LambdaChain(tuple(sets), tuple(jacs), k)

    def lambda_k(self, k: int, max_boxes: int = DEFAULT_MAX_BOXES) -> Region:
        if k < 0:
            raise ConfigError("k must be non-negative", "k")
        return self.lambda_chain(depth=k, max_boxes=max_boxes)[k]

    def image_pairwise_disjoint(self) -> bool:
        """Injectivity witness: the closed images of distinct pieces do not meet."""
        self._require_box_affine()
        imgs = [p.image for p in self.pieces]
        for i in range(len(imgs)):
            for j in range(i + 1, len(imgs)):
                if imgs[i].intersects(imgs[j]):
                    return False
        return True

    # ----------------------------------------------------------- serialisation
    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}


def _unit(x, name, lo=0.0, hi=1.0, lo_open=True, hi_open=True):
    x = float(x)
    bad = (x <= lo if lo_open else x < lo) or (x >= hi if hi_open else x > hi) or not math.isfinite(x)
    if bad:
        lb = "(" if lo_open else "["
        rb = ")" if hi_open else "]"
        raise ConfigError(f"must lie in {lb}{lo}, {hi}{rb}, got {x}", name)
    return x


def contraction_1d(a: float, c: float = 0.0) -> PiecewiseMap:
    """``x -> a x + c (mod 1)`` on ``[0, 1]``.

    The cut sits at ``(1 - c) / a``; when that exceeds 1 the map has a
    single piece.
    """
    a = _unit(a, "a")
    c = _unit(c, "c", lo_open=False)
    cut = (1.0 - c) / a
    if cut < 1.0:
        pieces = (
            AffinePiece(Box.open([0.0], [cut]), [[a]], [c]),
            AffinePiece(Box.open([cut], [1.0]), [[a]], [c - 1.0]),
        )
    else:
        pieces = (AffinePiece(Box.open([0.0], [1.0]), [[a]], [c]),)
    return PiecewiseMap("contraction_1d", {"a": a, "c": c}, 1, pieces, contraction=a)


def baker(gamma_a: float, gamma_b: float, alpha: float) -> PiecewiseMap:
    """Generalised baker map with two horizontal pieces split at ``y = alpha``."""
    ga = _unit(gamma_a, "gamma_a", hi=0.5)
    gb = _unit(gamma_b, "gamma_b", hi=0.5)
    al = _unit(alpha, "alpha", hi=0.5, hi_open=False)
    if not ga < gb:
        raise ConfigError(f"need gamma_a < gamma_b, got {ga} >= {gb}", "gamma_b")
    pieces = (
        AffinePiece(Box.open([0.0, 0.0], [1.0, al]), np.diag([ga, 1.0 / al]), [0.0, 0.0]),
        AffinePiece(
            Box.open([0.0, al], [1.0, 1.0]),
            np.diag([gb, 1.0 / (1.0 - al)]),
            [0.5, -al / (1.0 - al)],
        ),
    )
    return PiecewiseMap("baker", {"gamma_a": ga, "gamma_b": gb, "alpha": al}, 2, pieces)


def quad_affine(a: float, t1: float, t2: float) -> PiecewiseMap:
    """Four-quadrant contraction of the unit square with cuts ``x = t1`` and ``y = t2``."""
    a = _unit(a, "a")
    t1 = _unit(t1, "t1")
    t2 = _unit(t2, "t2")
    A = a * np.eye(2)
    b = 1.0 - a
    pieces = (
        AffinePiece(Box.open([0.0, 0.0], [t1, t2]), A, [b, 0.0]),
        AffinePiece(Box.open([t1, 0.0], [1.0, t2]), A, [b, b]),
        AffinePiece(Box.open([0.0, t2], [t1, 1.0]), A, [0.0, 0.0]),
        AffinePiece(Box.open([t1, t2], [1.0, 1.0]), A, [0.0, b]),
    )
    return PiecewiseMap("quad_affine", {"a": a, "t1": t1, "t2": t2}, 2, pieces, contraction=a)


BUILTINS = {
    "contraction_1d": (contraction_1d, ("a", "c")),
    "baker": (baker, ("gamma_a", "gamma_b", "alpha")),
    "quad_affine": (quad_affine, ("a", "t1", "t2")),
}


def make_map(kind: str, **params) -> PiecewiseMap:
    """Build a builtin map from its kind tag and named parameters."""
    try:
        ctor, names = BUILTINS[kind]
    except KeyError:
        raise ConfigError(f"unknown map kind {kind!r}; expected one of {sorted(BUILTINS)}", "map.kind")
    unknown = set(params) - set(names)
    if unknown:
        raise ConfigError(f"unexpected parameters {sorted(unknown)} for {kind}", "map")
    missing = [n for n in names if n not in params and not (kind == "contraction_1d" and n == "c")]
    if missing:
        raise ConfigError(f"missing parameters {missing} for {kind}", "map")
    return ctor(**params)


def map_from_dict(d: dict) -> PiecewiseMap:
    d = dict(d)
    return make_map(d.pop("kind"), **d)


def sup_distance(x, y) -> float:
    return float(np.max(np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))))
