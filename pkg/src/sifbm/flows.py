"""Discretized increasing set paths and the projection of sampled fields.

An elementary flow is a grid of parameter values with a box value at each
point, nondecreasing under set inclusion.  A simple flow chains elementary
segments, accumulating the union of earlier segment endpoints, so its values
live among finite unions of boxes.  The time change of a flow is the measure
of its value at each grid point; projecting an exact field ensemble onto a
flow yields, in law, a one-parameter fractional Brownian motion evaluated at
that time change.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gaussian import HurstParam, SampleEnsemble, additive_extend, required_union_indices
from .rects import EMPTY, Rect, RectUnion, rect_contains, rect_measure, union_measure

DEFAULT_FLOW_POINTS = 64


class FlowMonotonicityError(ValueError):
    """Flow values must be nondecreasing under set inclusion along the grid."""


@dataclass(frozen=True)
class ElementaryFlow:
    grid: np.ndarray            # strictly increasing parameter values
    values: tuple[Rect, ...]    # one box (possibly empty) per grid point

    def __post_init__(self):
        self.grid.flags.writeable = False

    @property
    def a(self) -> float:
        return float(self.grid[0])

    @property
    def b(self) -> float:
        return float(self.grid[-1])


@dataclass(frozen=True)
class SimpleFlow:
    """Piecewise-elementary flow; on segment i the value is the current
    segment's box joined with the final boxes of all earlier segments."""

    segments: tuple[ElementaryFlow, ...]

    def __post_init__(self):
        if not self.segments:
            raise ValueError("simple flow needs at least one segment")
        for prev, nxt in zip(self.segments[:-1], self.segments[1:]):
            if prev.b != nxt.a:
                raise ValueError(
                    f"segment grids must chain: {prev.b} != {nxt.a}"
                )

    @property
    def breakpoints(self) -> list[float]:
        return [self.segments[0].a] + [s.b for s in self.segments]

    def grid_and_values(self) -> tuple[np.ndarray, list[RectUnion]]:
        """Merged grid with one accumulated union per point (shared
        breakpoints appear once, valued by the later segment)."""
        grid: list[float] = []
        values: list[RectUnion] = []
        accumulated: list[Rect] = []
        for si, seg in enumerate(self.segments):
            for gi, t in enumerate(seg.grid):
                if si > 0 and gi == 0:
                    # breakpoint already emitted by the previous segment;
                    # re-emitting would duplicate the grid point
                    if grid and grid[-1] == t:
                        values[-1] = RectUnion((seg.values[gi], *accumulated))
                        continue
                grid.append(float(t))
                values.append(RectUnion((seg.values[gi], *accumulated)))
            accumulated.append(seg.values[-1])
        return np.asarray(grid), values


Flow = ElementaryFlow | SimpleFlow


@dataclass(frozen=True)
class TimeChange:
    """theta(t) = m(f(t)) along a flow's grid; always nondecreasing.

    Backsteps below 1e-12 relative (inclusion-exclusion roundoff) are snapped
    up to the running maximum so the nondecreasing contract is exact.
    """

    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.size and vals[0] < 0:
            raise ValueError("time change must be non-negative")
        scale = float(vals.max()) if vals.size else 0.0
        out = vals.copy()
        for i in range(1, out.size):
            if out[i] < out[i - 1]:
                if out[i - 1] - out[i] > 1e-12 * max(scale, 1.0):
                    raise ValueError(
                        f"time change decreases at grid point {i}: "
                        f"{out[i - 1]} -> {out[i]}"
                    )
                out[i] = out[i - 1]
        object.__setattr__(self, "values", out)
        self.grid.flags.writeable = False
        self.values.flags.writeable = False


def make_elementary_flow(grid, corner_path) -> ElementaryFlow:
    """Validate and build an elementary flow.

    ``corner_path`` is a sequence of box values: corner tuples, Rects, or
    None/empty for the empty set (allowed only as a prefix, since the values
    must be nondecreasing under inclusion).
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ValueError("grid must be a 1-d array with at least 2 points")
    if not np.all(np.diff(grid) > 0):
        i = int(np.flatnonzero(np.diff(grid) <= 0)[0])
        raise ValueError(f"grid not strictly increasing at ({grid[i]}, {grid[i+1]})")
    values = []
    for v in corner_path:
        if v is None:
            values.append(EMPTY)
        elif isinstance(v, Rect):
            values.append(v)
        else:
            values.append(Rect(tuple(v)))
    if len(values) != grid.size:
        raise ValueError("corner_path length must match grid length")
    for i in range(len(values) - 1):
        if not rect_contains(values[i + 1], values[i]):
            raise FlowMonotonicityError(
                f"flow not increasing between grid points "
                f"({grid[i]}, {grid[i+1]}): {values[i]!r} is not contained "
                f"in {values[i+1]!r}"
            )
    return ElementaryFlow(grid, tuple(values))


def time_change(f: Flow) -> TimeChange:
    """Measure of the flow value at each grid point."""
    if isinstance(f, ElementaryFlow):
        return TimeChange(f.grid, np.array([rect_measure(v) for v in f.values]))
    grid, values = f.grid_and_values()
    return TimeChange(grid, np.array([union_measure(v) for v in values]))


def flows_through(u: Rect, points: int = DEFAULT_FLOW_POINTS) -> ElementaryFlow:
    """Canonical elementary flow reaching u at parameter 1: linear corner
    interpolation from the degenerate origin box, f(t) = [0, t*corner]."""
    if u.is_empty:
        raise ValueError("cannot build a flow through the empty set")
    if points < 2:
        raise ValueError("need at least 2 grid points")
    grid = np.linspace(0.0, 1.0, points)
    corner = np.asarray(u.corner)
    values = [Rect(tuple(t * corner)) for t in grid]
    values[-1] = u  # exact endpoint
    return ElementaryFlow(grid, tuple(values))


def required_flow_indices(f: Flow) -> set[Rect]:
    """Every ensemble column a projection of this flow will read."""
    if isinstance(f, ElementaryFlow):
        return {v for v in f.values if not v.is_empty}
    out: set[Rect] = set()
    _, values = f.grid_and_values()
    for v in values:
        out |= required_union_indices(v)
    return out


@dataclass(frozen=True)
class PathEnsemble:
    """Sampled paths along a flow: one row per field realization."""

    theta: np.ndarray         # time-change values, one per grid point
    paths: np.ndarray         # (n_samples, n_points)
    hurst: HurstParam
    grid: np.ndarray | None = None

    def __post_init__(self):
        self.theta.flags.writeable = False
        self.paths.flags.writeable = False

    @property
    def n_samples(self) -> int:
        return self.paths.shape[0]


def predicted_increment_moment(f: Flow, h: HurstParam) -> np.ndarray:
    """E[(X^f_t - X^f_s)^2] for the exact field, over all grid pairs.

    Elementary flows obey the time-changed power law
    |theta_t - theta_s|^{2H}.  Simple flows take values among finite unions,
    where the field is the additive inclusion-exclusion combination of box
    values; their increment moments follow from the covariance of that signed
    combination and deviate from the power law exactly where the branches
    interact, so the expansion is the correct prediction to test against.
    """
    from .gaussian import build_cov_matrix, union_expansion

    if isinstance(f, ElementaryFlow):
        th = time_change(f).values
        return np.abs(th[:, None] - th[None, :]) ** h.two_h
    _, values = f.grid_and_values()
    expansions = [union_expansion(v) for v in values]
    boxes = sorted(
        {b for ex in expansions for _, b in ex if not b.is_empty},
        key=lambda r: r.corner,
    )
    pos = {b: i for i, b in enumerate(boxes)}
    weights = np.zeros((len(values), len(boxes)))
    for i, ex in enumerate(expansions):
        for sign, b in ex:
            if not b.is_empty:
                weights[i, pos[b]] += sign
    cov = build_cov_matrix(boxes, h).matrix
    second = weights @ cov @ weights.T
    d = np.diag(second)
    return np.maximum(d[:, None] + d[None, :] - 2.0 * second, 0.0)


def project(e: SampleEnsemble, f: Flow) -> PathEnsemble:
    """Evaluate each sample of the field along the flow.

    Elementary flows read stored columns directly; simple flows go through
    the additive inclusion-exclusion extension, so every intersection of
    accumulated parts must be present in the ensemble.
    """
    from .gaussian import MissingIndexError

    tc = time_change(f)
    if isinstance(f, ElementaryFlow):
        pos = {u: i for i, u in enumerate(e.indices)}
        missing = sorted(
            {v for v in f.values if not v.is_empty and v not in pos},
            key=lambda r: r.corner,
        )
        if missing:
            raise MissingIndexError(missing)
        cols = np.empty((e.n_samples, len(f.values)))
        for j, v in enumerate(f.values):
            cols[:, j] = 0.0 if v.is_empty else e.samples[:, pos[v]]
        return PathEnsemble(tc.values, cols, e.hurst, grid=f.grid)
    grid, values = f.grid_and_values()
    cols = np.empty((e.n_samples, len(values)))
    for j, v in enumerate(values):
        cols[:, j] = additive_extend(e, v)
    return PathEnsemble(tc.values, cols, e.hurst, grid=grid)
