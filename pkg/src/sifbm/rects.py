"""Rectangle index family: origin-anchored boxes in R^N_+, their finite unions,
left-neighborhoods U \\ (U_1 u ... u U_n), and the Lebesgue reference measure.

Every set handled here is a finite boolean combination of boxes [0, t].  All
measure queries reduce to inclusion-exclusion over corner minima, and all
containment/disjointness predicates are decided exactly (up to Lebesgue-null
boundaries) on the cell arrangement induced by the corner coordinates.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

# Exact subset enumeration is 2^k; beyond this the family is refused rather
# than silently approximated.
MAX_UNION_PARTS = 20


class DimensionMismatchError(ValueError):
    """Raised when two index sets live in incompatible coordinate spaces."""


@dataclass(frozen=True)
class Rect:
    """A compact box [0, t] in R^N_+, identified by its upper corner t.

    ``corner is None`` encodes the empty set, which is compatible with any
    dimension.  A corner with some zero coordinates is a valid degenerate
    index of measure zero, distinct from the empty set.
    """

    corner: tuple[float, ...] | None

    def __post_init__(self):
        if self.corner is None:
            return
        cleaned = []
        for c in self.corner:
            c = float(c)
            if not math.isfinite(c) or c < 0.0:
                raise ValueError(f"corner coordinates must be finite and >= 0, got {c}")
            cleaned.append(c + 0.0)  # normalize -0.0
        object.__setattr__(self, "corner", tuple(cleaned))

    @property
    def is_empty(self) -> bool:
        return self.corner is None

    @property
    def dim(self) -> int | None:
        return None if self.corner is None else len(self.corner)

    def __repr__(self):
        if self.corner is None:
            return "Rect(empty)"
        return f"Rect({list(self.corner)})"


EMPTY = Rect(None)


def rect(*coords: float) -> Rect:
    """Shorthand constructor: rect(2, 0.5) == Rect((2.0, 0.5))."""
    return Rect(tuple(coords))


def _check_same_dim(a: Rect, b: Rect):
    if a.is_empty or b.is_empty:
        return
    if len(a.corner) != len(b.corner):
        raise DimensionMismatchError(
            f"rectangles live in R^{len(a.corner)} and R^{len(b.corner)}"
        )


def rect_measure(r: Rect) -> float:
    """Lebesgue measure of [0, t]: the product of the corner coordinates."""
    if r.is_empty:
        return 0.0
    out = 1.0
    for c in r.corner:
        out *= c
    return out


def rect_intersection(a: Rect, b: Rect) -> Rect:
    """Componentwise minimum of corners; empty if either operand is empty."""
    if a.is_empty or b.is_empty:
        return EMPTY
    _check_same_dim(a, b)
    return Rect(tuple(min(x, y) for x, y in zip(a.corner, b.corner)))


def rect_contains(outer: Rect, inner: Rect) -> bool:
    """Set containment inner <= outer (empty set is contained in everything)."""
    if inner.is_empty:
        return True
    if outer.is_empty:
        return False
    _check_same_dim(outer, inner)
    return all(i <= o for i, o in zip(inner.corner, outer.corner))


def symdiff_measure(a: Rect, b: Rect) -> float:
    """m(a (+) b) = m(a) + m(b) - 2 m(a n b), never negative."""
    _check_same_dim(a, b)
    val = rect_measure(a) + rect_measure(b) - 2.0 * rect_measure(rect_intersection(a, b))
    return max(val, 0.0)


@dataclass(frozen=True)
class RectUnion:
    """A finite union of boxes, stored in canonical form: empty parts and
    parts contained in another part are dropped.  An empty part list is the
    empty set."""

    parts: tuple[Rect, ...]

    def __post_init__(self):
        kept: list[Rect] = []
        for p in self.parts:
            if p.is_empty:
                continue
            if any(rect_contains(q, p) for q in kept):
                continue
            kept = [q for q in kept if not rect_contains(p, q)]
            kept.append(p)
        kept.sort(key=lambda r: r.corner)
        object.__setattr__(self, "parts", tuple(kept))

    @property
    def is_empty(self) -> bool:
        return not self.parts

    def __repr__(self):
        return f"RectUnion({list(self.parts)})"


def union_measure(parts: RectUnion | Sequence[Rect]) -> float:
    """Measure of a finite union by inclusion-exclusion over all non-empty
    subsets (exact; at most MAX_UNION_PARTS parts)."""
    if isinstance(parts, RectUnion):
        rects = parts.parts
    else:
        rects = tuple(p for p in parts if not p.is_empty)
    if not rects:
        return 0.0
    if len(rects) > MAX_UNION_PARTS:
        raise ValueError(
            f"inclusion-exclusion capped at {MAX_UNION_PARTS} parts, got {len(rects)}"
        )
    for r in rects[1:]:
        _check_same_dim(rects[0], r)
    total = 0.0
    for k in range(1, len(rects) + 1):
        sign = 1.0 if k % 2 == 1 else -1.0
        for combo in itertools.combinations(rects, k):
            inter = combo[0]
            for r in combo[1:]:
                inter = rect_intersection(inter, r)
            total += sign * rect_measure(inter)
    return max(total, 0.0)


@dataclass(frozen=True)
class LeftNeighborhood:
    """The set C = base \\ (sub_1 u ... u sub_n) with base and sub_i boxes.

    An empty subtracted list means C = base.  Intersections of two
    left-neighborhoods stay in the class; unions generally do not.
    """

    base: Rect
    subtracted: tuple[Rect, ...] = ()

    def __post_init__(self):
        subs = tuple(s for s in self.subtracted if not s.is_empty)
        for s in subs:
            _check_same_dim(self.base, s)
        object.__setattr__(self, "subtracted", subs)

    def intersect(self, other: "LeftNeighborhood") -> "LeftNeighborhood":
        """(U \\ uA) n (V \\ uB) = (U n V) \\ u(A u B)."""
        return LeftNeighborhood(
            rect_intersection(self.base, other.base),
            self.subtracted + other.subtracted,
        )

    def intersect_rect(self, r: Rect) -> "LeftNeighborhood":
        return LeftNeighborhood(rect_intersection(self.base, r), self.subtracted)

    def subtract_rect(self, r: Rect) -> "LeftNeighborhood":
        return LeftNeighborhood(self.base, self.subtracted + (r,))

    def __repr__(self):
        return f"LeftNeighborhood({self.base!r} minus {list(self.subtracted)})"


def left_nbhd_measure(c: LeftNeighborhood) -> float:
    """m(C) = m(U) - m(U n (u sub_i)), via inclusion-exclusion; >= 0."""
    base_m = rect_measure(c.base)
    if not c.subtracted:
        return base_m
    clipped = [rect_intersection(c.base, s) for s in c.subtracted]
    return max(base_m - union_measure(clipped), 0.0)


@dataclass(frozen=True)
class LebesgueMeasure:
    """The reference Radon measure: Lebesgue product measure on boxes.

    Kept as a type so a different reference measure could be slotted in; only
    the Lebesgue rule is implemented.
    """

    dimension: int

    def __call__(self, s) -> float:
        if isinstance(s, Rect):
            return rect_measure(s)
        if isinstance(s, RectUnion):
            return union_measure(s)
        if isinstance(s, LeftNeighborhood):
            return left_nbhd_measure(s)
        raise TypeError(f"cannot measure object of type {type(s).__name__}")


# ---------------------------------------------------------------------------
# Exact (up to null sets) predicates on boolean combinations of boxes.
#
# The corner coordinates of all boxes involved induce a grid of open cells;
# each cell lies entirely inside or outside every box, so membership of a
# region is a per-cell boolean.  Null cells are ignored throughout, which is
# the right notion for measure-style set functions.
# ---------------------------------------------------------------------------

Region = Rect | RectUnion | LeftNeighborhood


def _region_rects(region: Region | Iterable[Region]) -> list[Rect]:
    if isinstance(region, Rect):
        return [] if region.is_empty else [region]
    if isinstance(region, RectUnion):
        return list(region.parts)
    if isinstance(region, LeftNeighborhood):
        out = [] if region.base.is_empty else [region.base]
        return out + list(region.subtracted)
    out = []
    for r in region:
        out.extend(_region_rects(r))
    return out


class CellArrangement:
    """Grid-cell decomposition of R^N_+ induced by a family of box corners."""

    def __init__(self, rects: Iterable[Rect]):
        rects = [r for r in rects if not r.is_empty]
        if not rects:
            self.dim = 0
            self.axes = []
            return
        dims = {len(r.corner) for r in rects}
        if len(dims) != 1:
            raise DimensionMismatchError(f"mixed dimensions {sorted(dims)}")
        self.dim = dims.pop()
        self.axes = []
        for i in range(self.dim):
            vals = sorted({r.corner[i] for r in rects} | {0.0})
            self.axes.append(vals)

    def _cell_in_rect(self, cell: tuple[int, ...], r: Rect) -> bool:
        # cell k on axis i is the open interval (axes[i][k], axes[i][k+1])
        return all(self.axes[i][k + 1] <= r.corner[i] for i, k in enumerate(cell))

    def cells(self, region: Region | Iterable[Region]) -> frozenset[tuple[int, ...]]:
        """Positive-volume cells whose interior lies in the region."""
        out = set()
        for cell in itertools.product(*(range(len(a) - 1) for a in self.axes)):
            if self._cell_member(cell, region):
                out.add(cell)
        return frozenset(out)

    def _cell_member(self, cell, region) -> bool:
        if isinstance(region, Rect):
            return (not region.is_empty) and self._cell_in_rect(cell, region)
        if isinstance(region, RectUnion):
            return any(self._cell_in_rect(cell, p) for p in region.parts)
        if isinstance(region, LeftNeighborhood):
            if region.base.is_empty or not self._cell_in_rect(cell, region.base):
                return False
            return not any(self._cell_in_rect(cell, s) for s in region.subtracted)
        return any(self._cell_member(cell, r) for r in region)

    def cell_volume(self, cell: tuple[int, ...]) -> float:
        out = 1.0
        for i, k in enumerate(cell):
            out *= self.axes[i][k + 1] - self.axes[i][k]
        return out


def _arrangement_for(*regions) -> CellArrangement:
    rects = []
    for reg in regions:
        rects.extend(_region_rects(reg))
    return CellArrangement(rects)


def region_subset_ae(inner: Region | Iterable[Region], outer: Region | Iterable[Region]) -> bool:
    """True if inner is contained in outer up to a Lebesgue-null set."""
    arr = _arrangement_for(inner, outer)
    return arr.cells(inner) <= arr.cells(outer)


def region_disjoint_ae(a: Region | Iterable[Region], b: Region | Iterable[Region]) -> bool:
    """True if a and b overlap only on a Lebesgue-null set."""
    arr = _arrangement_for(a, b)
    return not (arr.cells(a) & arr.cells(b))


def region_equal_ae(a: Region | Iterable[Region], b: Region | Iterable[Region]) -> bool:
    """True if a and b differ only by a Lebesgue-null set."""
    arr = _arrangement_for(a, b)
    return arr.cells(a) == arr.cells(b)
