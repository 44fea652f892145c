"""Exact Gaussian sampling of the set-indexed fractional field.

The covariance of the field over box indices is

    Cov(X_U, X_V) = 0.5 * [ m(U)^{2H} + m(V)^{2H} - m(U (+) V)^{2H} ],

with m Lebesgue measure, (+) the symmetric difference, H in (0, 1/2], and the
convention 0^{2H} = 0.  At H = 1/2 this reduces to m(U n V).  Ensembles are
drawn by Cholesky factorization with a recorded jitter ladder; each sample row
has its own counter-derived random stream so output is bit-identical for any
execution order or worker count.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .rects import (
    EMPTY,
    Rect,
    RectUnion,
    rect_intersection,
    rect_measure,
    symdiff_measure,
)

# Jitter multipliers tried in order, scaled by max(diag).
JITTER_LADDER = (0.0, 1e-12, 1e-10, 1e-8)

# Rows per sampling block; fixed so BLAS call shapes (and hence bits) do not
# depend on the worker count.
_BLOCK = 256


class NotPSDError(ValueError):
    """Covariance not positive semidefinite within the jitter budget."""


class MissingIndexError(KeyError):
    """An operation needed ensemble columns that are not present."""

    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__(f"missing index columns: {self.missing}")


@dataclass(frozen=True)
class HurstParam:
    """Self-similarity exponent H, restricted to (0, 1/2]."""

    value: float

    def __post_init__(self):
        v = float(self.value)
        if not (0.0 < v <= 0.5):
            raise ValueError(f"Hurst parameter must lie in (0, 1/2], got {v}")
        object.__setattr__(self, "value", v)

    @property
    def two_h(self) -> float:
        return 2.0 * self.value

    @property
    def is_half(self) -> bool:
        return self.value == 0.5


def covariance_from_measures(m_u: float, m_v: float, m_symdiff: float, h: HurstParam) -> float:
    """Covariance given the three measure values (0^{2H} := 0)."""
    p = h.two_h
    return 0.5 * (m_u**p + m_v**p - max(m_symdiff, 0.0) ** p)


def covariance(u: Rect, v: Rect, h: HurstParam) -> float:
    """Covariance of the field at two box indices."""
    return covariance_from_measures(
        rect_measure(u), rect_measure(v), symdiff_measure(u, v), h
    )


@dataclass(frozen=True)
class CovMatrix:
    indices: tuple[Rect, ...]
    matrix: np.ndarray
    hurst: HurstParam

    def __post_init__(self):
        self.matrix.flags.writeable = False


def build_cov_matrix(indices, h: HurstParam) -> CovMatrix:
    """Dense symmetric covariance over an ordered index list."""
    indices = tuple(indices)
    if not indices:
        raise ValueError("index list must be non-empty")
    n = len(indices)
    meas = np.array([rect_measure(u) for u in indices])
    p = h.two_h
    mat = np.empty((n, n))
    for i in range(n):
        mat[i, i] = meas[i] ** p
        for j in range(i):
            sd = max(meas[i] + meas[j] - 2.0 * rect_measure(rect_intersection(indices[i], indices[j])), 0.0)
            mat[i, j] = mat[j, i] = 0.5 * (meas[i] ** p + meas[j] ** p - sd**p)
    return CovMatrix(indices, mat, h)


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular factor L with L L^T ~= C + jitter*I.

    ``zero_variance`` marks indices whose theoretical variance is exactly 0;
    sampled columns for those indices are forced to 0 so degenerate boxes
    stay degenerate even when jitter was applied.
    """

    indices: tuple[Rect, ...]
    lower: np.ndarray
    jitter: float
    hurst: HurstParam
    zero_variance: np.ndarray

    def __post_init__(self):
        self.lower.flags.writeable = False
        self.zero_variance.flags.writeable = False


def cholesky(c: CovMatrix, jitter_ladder=JITTER_LADDER) -> CholeskyFactor:
    """Factorize, escalating through the jitter ladder until it succeeds;
    the applied jitter is recorded on the factor."""
    mat = c.matrix
    if not np.allclose(mat, mat.T, rtol=0, atol=1e-12 * max(1.0, np.abs(mat).max())):
        raise ValueError("covariance matrix is not symmetric")
    diag = np.diag(mat)
    zero_var = diag == 0.0
    scale = diag.max() if diag.size else 0.0
    if scale == 0.0:
        # all indices degenerate: the field is identically zero
        return CholeskyFactor(c.indices, np.zeros_like(mat), 0.0, c.hurst, zero_var)
    for mult in jitter_ladder:
        eps = mult * scale
        try:
            lower = np.linalg.cholesky(mat + eps * np.eye(mat.shape[0]))
        except np.linalg.LinAlgError:
            continue
        return CholeskyFactor(c.indices, lower, eps, c.hurst, zero_var)
    raise NotPSDError(
        f"not PSD within jitter budget {jitter_ladder[-1]:g}*max(diag); "
        "the covariance is invalid"
    )


@dataclass(frozen=True)
class SampleEnsemble:
    """n_samples independent draws of the field over a fixed index list."""

    indices: tuple[Rect, ...]
    samples: np.ndarray  # (n_samples, n_indices)
    seed: int
    hurst: HurstParam

    def __post_init__(self):
        self.samples.flags.writeable = False

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    def column(self, u: Rect) -> np.ndarray:
        try:
            return self.samples[:, self.indices.index(u)]
        except ValueError:
            raise MissingIndexError([u]) from None


def _row_rng(seed: int, row: int) -> np.random.Generator:
    # Philox keyed by (seed, row): counter-based, order-independent streams.
    key = np.random.SeedSequence(seed, spawn_key=(row,)).generate_state(2, np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def sample_ensemble(factor: CholeskyFactor, n_samples: int, seed: int, jobs: int = 1) -> SampleEnsemble:
    """Draw rows L @ z with z standard normal from per-row derived streams."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    k = len(factor.indices)
    lt = factor.lower.T.copy()  # (k, k), right operand of row-block matmuls
    out = np.empty((n_samples, k))

    def fill(lo: int):
        hi = min(lo + _BLOCK, n_samples)
        z = np.empty((hi - lo, k))
        for i in range(lo, hi):
            _row_rng(seed, i).standard_normal(out=z[i - lo])
        out[lo:hi] = z @ lt

    starts = range(0, n_samples, _BLOCK)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            list(ex.map(fill, starts))
    else:
        for lo in starts:
            fill(lo)
    out[:, factor.zero_variance] = 0.0
    return SampleEnsemble(factor.indices, out, int(seed), factor.hurst)


def empirical_covariance(e: SampleEnsemble) -> np.ndarray:
    """Raw second-moment matrix.  The field is centered by construction, so
    the mean is not subtracted (subtracting would only add estimator noise)."""
    if e.n_samples < 2:
        raise ValueError("need at least 2 samples")
    return (e.samples.T @ e.samples) / e.n_samples


def union_expansion(target: RectUnion) -> list[tuple[float, Rect]]:
    """Inclusion-exclusion expansion of a finite union into signed box terms."""
    from .rects import MAX_UNION_PARTS

    parts = target.parts
    if len(parts) > MAX_UNION_PARTS:
        raise ValueError(
            f"inclusion-exclusion capped at {MAX_UNION_PARTS} parts, got {len(parts)}"
        )
    terms = []
    for k in range(1, len(parts) + 1):
        sign = 1.0 if k % 2 == 1 else -1.0
        for combo in itertools.combinations(parts, k):
            inter = combo[0]
            for r in combo[1:]:
                inter = rect_intersection(inter, r)
            terms.append((sign, inter))
    return terms


def additive_extend(e: SampleEnsemble, target: RectUnion) -> np.ndarray:
    """Per-sample value of the field on a finite union of boxes,
    X_{union} = sum over non-empty part subsets of (-1)^{|S|+1} X_{intersection S}.

    Every intersection must be present as an ensemble column.
    """
    if target.is_empty:
        return np.zeros(e.n_samples)
    terms = union_expansion(target)
    pos = {u: i for i, u in enumerate(e.indices)}
    missing = sorted(
        {r for _, r in terms if r not in pos and not r.is_empty},
        key=lambda r: r.corner,
    )
    if missing:
        raise MissingIndexError(missing)
    out = np.zeros(e.n_samples)
    for sign, r in terms:
        if not r.is_empty:
            out += sign * e.samples[:, pos[r]]
    return out


def required_union_indices(target: RectUnion) -> set[Rect]:
    """All box columns additive_extend will need for this union."""
    return {r for _, r in union_expansion(target) if not r.is_empty}
