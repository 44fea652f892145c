"""Statistical verification primitives for projected paths.

Everything here treats the field as centered, so "variance" means the raw
second moment throughout; mean-subtraction would only add estimator noise and
would hide mean-corruption defects.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.stats

from .flows import TimeChange
from .gaussian import HurstParam


class DegenerateDataError(ValueError):
    """Input carries no usable variation (constant paths, constant theta)."""


@dataclass(frozen=True)
class ProfileRow:
    s: float
    t: float
    theta_s: float
    theta_t: float
    predicted: float
    observed: float
    stderr: float


@dataclass(frozen=True)
class VarianceProfile:
    """Increment second moments against the |theta_t - theta_s|^{2H} law.

    ``stderr`` is the chi-square plug-in standard error observed*sqrt(2/n).
    """

    rows: tuple[ProfileRow, ...]
    n_samples: int
    hurst: HurstParam

    def fraction_within(self, k: float = 4.0) -> float:
        """Fraction of pairs with |observed - predicted| <= k * stderr."""
        ok = sum(
            1 for r in self.rows if abs(r.observed - r.predicted) <= k * r.stderr
        )
        return ok / len(self.rows) if self.rows else 1.0

    def max_deviation_sigmas(self) -> float:
        out = 0.0
        for r in self.rows:
            if r.stderr > 0:
                out = max(out, abs(r.observed - r.predicted) / r.stderr)
            elif r.observed != r.predicted:
                return np.inf
        return out


def variance_profile(
    paths: np.ndarray,
    tc: TimeChange,
    h: HurstParam,
    max_pairs: int | None = None,
    predicted: np.ndarray | None = None,
) -> VarianceProfile:
    """All grid pairs (or a deterministic subsample) with predicted vs
    observed increment second moments.

    The default prediction is the time-changed power law
    |theta_t - theta_s|^{2H}; pass ``predicted`` (a full pairwise matrix) for
    flows whose values are unions, where the additive-expansion moment is the
    correct law.
    """
    paths = np.asarray(paths)
    n, k = paths.shape
    if k < 2:
        raise ValueError("need a grid of length >= 2")
    theta = tc.values
    # second-moment matrix gives every pairwise increment moment at once:
    # E[(X_t - X_s)^2] = M_tt + M_ss - 2 M_ts
    m = (paths.T @ paths) / n
    pairs = [(i, j) for i in range(k) for j in range(i + 1, k)]
    if max_pairs is not None and len(pairs) > max_pairs:
        stride = int(np.ceil(len(pairs) / max_pairs))
        pairs = pairs[::stride]
    rows = []
    grid = tc.grid
    p = h.two_h
    for i, j in pairs:
        observed = max(m[i, i] + m[j, j] - 2.0 * m[i, j], 0.0)
        if predicted is not None:
            pred = float(predicted[i, j])
        else:
            pred = abs(theta[j] - theta[i]) ** p
        rows.append(
            ProfileRow(
                s=float(grid[i]),
                t=float(grid[j]),
                theta_s=float(theta[i]),
                theta_t=float(theta[j]),
                predicted=pred,
                observed=float(observed),
                stderr=float(observed * np.sqrt(2.0 / n)),
            )
        )
    return VarianceProfile(tuple(rows), n, h)


def hurst_estimate(paths: np.ndarray, tc: TimeChange) -> float:
    """Slope/2 of log increment second moment against log theta increment,
    over consecutive grid pairs.

    Regresses on the time change, not the raw grid, so the estimate is
    invariant under reparameterizing the flow.
    """
    paths = np.asarray(paths)
    n, k = paths.shape
    if n < 1000:
        raise ValueError("need at least 1000 samples for a stable estimate")
    theta = np.asarray(tc.values)
    if len(np.unique(theta)) < 8:
        raise DegenerateDataError("need at least 8 distinct time-change values")
    xs, ys = [], []
    for i in range(k - 1):
        dtheta = theta[i + 1] - theta[i]
        if dtheta <= 0:
            continue
        inc = paths[:, i + 1] - paths[:, i]
        v = float(np.mean(inc**2))
        if v <= 0:
            raise DegenerateDataError("zero variance increment")
        xs.append(np.log(dtheta))
        ys.append(np.log(v))
    if len(xs) < 2:
        raise DegenerateDataError("no usable increments (constant time change)")
    slope = np.polyfit(xs, ys, 1)[0]
    return float(slope / 2.0)


@dataclass(frozen=True)
class GaussianityReport:
    skewness_z: float
    excess_kurtosis_z: float
    passed: bool
    n: int


def gaussianity_check(samples: np.ndarray, z_limit: float = 4.0) -> GaussianityReport:
    """Moment z-tests: skewness against sqrt(6/n), excess kurtosis against
    sqrt(24/n); closed-form thresholds, no critical-value tables."""
    x = np.asarray(samples, dtype=float)
    n = x.size
    if n < 1000:
        raise ValueError("need at least 1000 samples")
    if np.std(x) == 0:
        raise DegenerateDataError("zero variance sample")
    skew_z = scipy.stats.skew(x) / np.sqrt(6.0 / n)
    kurt_z = scipy.stats.kurtosis(x) / np.sqrt(24.0 / n)
    return GaussianityReport(
        skewness_z=float(skew_z),
        excess_kurtosis_z=float(kurt_z),
        passed=bool(abs(skew_z) < z_limit and abs(kurt_z) < z_limit),
        n=n,
    )
