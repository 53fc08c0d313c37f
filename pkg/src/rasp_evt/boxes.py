"""Exact algebra on axis-aligned boxes and finite unions of them.

Every interval endpoint carries a flag saying whether it is included, so open
pieces, closed boundary segments and the half-open leftovers of a set
difference are all represented without ambiguity.  Regions are kept as unions
of pairwise disjoint boxes, which makes the Lebesgue measure a plain sum.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


def _lo_max(a, a_closed, b, b_closed):
    if a > b:
        return a, a_closed
    if b > a:
        return b, b_closed
    return a, a_closed and b_closed


def _hi_min(a, a_closed, b, b_closed):
    if a < b:
        return a, a_closed
    if b < a:
        return b, b_closed
    return a, a_closed and b_closed


@dataclass(frozen=True)
class Box:
    """Product of intervals with per-endpoint inclusion flags."""

    lo: tuple
    hi: tuple
    lo_closed: tuple
    hi_closed: tuple

    def __post_init__(self):
        n = len(self.lo)
        if not (len(self.hi) == len(self.lo_closed) == len(self.hi_closed) == n):
            raise ValueError("inconsistent box dimensions")

    @classmethod
    def open(cls, lo: Sequence[float], hi: Sequence[float]) -> "Box":
        d = len(lo)
        return cls(tuple(map(float, lo)), tuple(map(float, hi)), (False,) * d, (False,) * d)

    @classmethod
    def closed(cls, lo: Sequence[float], hi: Sequence[float]) -> "Box":
        d = len(lo)
        return cls(tuple(map(float, lo)), tuple(map(float, hi)), (True,) * d, (True,) * d)

    @classmethod
    def point(cls, x: Sequence[float]) -> "Box":
        return cls.closed(x, x)

    @property
    def dim(self) -> int:
        return len(self.lo)

    def is_empty(self) -> bool:
        for a, b, ac, bc in zip(self.lo, self.hi, self.lo_closed, self.hi_closed):
            if a > b or (a == b and not (ac and bc)):
                return True
        return False

    def measure(self) -> float:
        if self.is_empty():
            return 0.0
        return float(np.prod([b - a for a, b in zip(self.lo, self.hi)]))

    def is_open(self) -> bool:
        return not any(self.lo_closed) and not any(self.hi_closed)

    def interior(self) -> "Box":
        d = self.dim
        return Box(self.lo, self.hi, (False,) * d, (False,) * d)

    def closure(self) -> "Box":
        d = self.dim
        return Box(self.lo, self.hi, (True,) * d, (True,) * d)

    def contains(self, x: Sequence[float]) -> bool:
        for xi, a, b, ac, bc in zip(x, self.lo, self.hi, self.lo_closed, self.hi_closed):
            if xi < a or xi > b:
                return False
            if (xi == a and not ac) or (xi == b and not bc):
                return False
        return True

    def contains_many(self, X: np.ndarray) -> np.ndarray:
        """Vectorised membership for an ``(N, D)`` array of points."""
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        mask = np.ones(len(X), dtype=bool)
        for d in range(self.dim):
            col = X[:, d]
            mask &= (col >= self.lo[d]) if self.lo_closed[d] else (col > self.lo[d])
            mask &= (col <= self.hi[d]) if self.hi_closed[d] else (col < self.hi[d])
        return mask

    def intersect(self, other: "Box") -> "Box":
        lo, hi, lc, hc = [], [], [], []
        for d in range(self.dim):
            a, ac = _lo_max(self.lo[d], self.lo_closed[d], other.lo[d], other.lo_closed[d])
            b, bc = _hi_min(self.hi[d], self.hi_closed[d], other.hi[d], other.hi_closed[d])
            lo.append(a)
            hi.append(b)
            lc.append(ac)
            hc.append(bc)
        return Box(tuple(lo), tuple(hi), tuple(lc), tuple(hc))

    def intersects(self, other: "Box") -> bool:
        return not self.intersect(other).is_empty()

    def issubset(self, other: "Box") -> bool:
        if self.is_empty():
            return True
        for d in range(self.dim):
            a, ac, b, bc = self.lo[d], self.lo_closed[d], other.lo[d], other.lo_closed[d]
            if a < b or (a == b and ac and not bc):
                return False
            a, ac, b, bc = self.hi[d], self.hi_closed[d], other.hi[d], other.hi_closed[d]
            if a > b or (a == b and ac and not bc):
                return False
        return True

    def difference(self, other: "Box") -> list["Box"]:
        """``self`` minus ``other`` as a list of disjoint non-empty boxes."""
        inter = self.intersect(other)
        if inter.is_empty():
            return [] if self.is_empty() else [self]
        pieces = []
        lo, hi = list(self.lo), list(self.hi)
        lc, hc = list(self.lo_closed), list(self.hi_closed)
        for d in range(self.dim):
            below = Box(
                tuple(lo),
                tuple(hi[:d] + [inter.lo[d]] + hi[d + 1:]),
                tuple(lc),
                tuple(hc[:d] + [not inter.lo_closed[d]] + hc[d + 1:]),
            )
            if not below.is_empty():
                pieces.append(below)
            above = Box(
                tuple(lo[:d] + [inter.hi[d]] + lo[d + 1:]),
                tuple(hi),
                tuple(lc[:d] + [not inter.hi_closed[d]] + lc[d + 1:]),
                tuple(hc),
            )
            if not above.is_empty():
                pieces.append(above)
            lo[d], lc[d] = inter.lo[d], inter.lo_closed[d]
            hi[d], hc[d] = inter.hi[d], inter.hi_closed[d]
        return pieces

    def diagonal_image(self, scale: Sequence[float], shift: Sequence[float]) -> "Box":
        """Image under ``x -> scale * x + shift`` (componentwise, exact flags)."""
        lo, hi, lc, hc = [], [], [], []
        for d in range(self.dim):
            s, c = float(scale[d]), float(shift[d])
            a, b = s * self.lo[d] + c, s * self.hi[d] + c
            if s > 0:
                entry = (a, b, self.lo_closed[d], self.hi_closed[d])
            elif s < 0:
                entry = (b, a, self.hi_closed[d], self.lo_closed[d])
            else:
                entry = (c, c, True, True)
            lo.append(entry[0])
            hi.append(entry[1])
            lc.append(entry[2])
            hc.append(entry[3])
        return Box(tuple(lo), tuple(hi), tuple(lc), tuple(hc))


class Region:
    """Finite union of pairwise disjoint boxes in a fixed dimension."""

    __slots__ = ("dim", "boxes")

    def __init__(self, dim: int, boxes: Iterable[Box] = (), disjoint: bool = False):
        self.dim = dim
        boxes = [b for b in boxes if not b.is_empty()]
        if not disjoint:
            boxes = _disjointify(boxes)
        self.boxes = tuple(boxes)

    @classmethod
    def empty(cls, dim: int) -> "Region":
        return cls(dim, (), disjoint=True)

    @classmethod
    def unit_cube(cls, dim: int, closed: bool = True) -> "Region":
        box = Box.closed([0.0] * dim, [1.0] * dim) if closed else Box.open([0.0] * dim, [1.0] * dim)
        return cls(dim, [box], disjoint=True)

    def __len__(self):
        return len(self.boxes)

    def __iter__(self):
        return iter(self.boxes)

    def __repr__(self):
        return f"Region(dim={self.dim}, boxes={len(self.boxes)}, measure={self.measure():.6g})"

    def is_empty(self) -> bool:
        return not self.boxes

    def measure(self) -> float:
        return float(sum(b.measure() for b in self.boxes))

    def contains(self, x) -> bool:
        return any(b.contains(x) for b in self.boxes)

    def contains_many(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        mask = np.zeros(len(X), dtype=bool)
        for b in self.boxes:
            mask |= b.contains_many(X)
        return mask

    def union(self, other: "Region") -> "Region":
        extra = []
        for b in other.boxes:
            extra.extend(_subtract_all([b], self.boxes))
        return Region(self.dim, self.boxes + tuple(extra), disjoint=True)

    def intersect(self, other) -> "Region":
        others = other.boxes if isinstance(other, Region) else (other,)
        out = []
        for a in self.boxes:
            for b in others:
                c = a.intersect(b)
                if not c.is_empty():
                    out.append(c)
        return Region(self.dim, out, disjoint=True)

    def intersects(self, other) -> bool:
        others = other.boxes if isinstance(other, Region) else (other,)
        return any(a.intersects(b) for a in self.boxes for b in others)

    def difference(self, other) -> "Region":
        others = other.boxes if isinstance(other, Region) else (other,)
        return Region(self.dim, _subtract_all(list(self.boxes), others), disjoint=True)

    def issubset(self, other) -> bool:
        others = other.boxes if isinstance(other, Region) else (other,)
        for a in self.boxes:
            if any(a.issubset(b) for b in others):
                continue
            if _subtract_all([a], others):
                return False
        return True

    def closure_boxes(self) -> "Region":
        return Region(self.dim, [b.closure() for b in self.boxes])


def _subtract_all(boxes: list, others: Sequence[Box]) -> list:
    for o in others:
        nxt = []
        for b in boxes:
            nxt.extend(b.difference(o))
        boxes = nxt
        if not boxes:
            break
    return boxes


def _disjointify(boxes: list) -> list:
    out: list = []
    for b in boxes:
        out.extend(_subtract_all([b], out))
    return out


def sup_ball(center: Sequence[float], radius: float) -> Box:
    """Open ball of the sup metric, which is an open cube."""
    c = np.asarray(center, dtype=float)
    return Box.open(c - radius, c + radius)
