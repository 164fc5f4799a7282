"""Normalisation quality metrics: histogram errors, Q-Q points, tissue
statistics and a spread-comparison test.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.stats import f as f_dist
from scipy.stats import t as t_dist

from .errors import InvalidInputError
from .histogram import Histogram, weighted_quantile

_MAX_GRID = 20_000


def _rebin(h: Histogram, grid: np.ndarray, step: float) -> np.ndarray:
    """Distribute unit-normalised bin mass linearly onto a uniform grid."""
    mass = h.weights / h.weights.sum()
    pos = (h.bin_centers - grid[0]) / step
    idx = np.clip(np.floor(pos).astype(int), 0, grid.size - 2)
    frac = np.clip(pos - idx, 0.0, 1.0)
    out = np.zeros(grid.size)
    np.add.at(out, idx, mass * (1.0 - frac))
    np.add.at(out, idx + 1, mass * frac)
    return out


def histogram_discrepancy(a: Histogram, b: Histogram) -> tuple[float, float]:
    """Mean absolute and root-mean-square bin error between two histograms.

    Both inputs are normalised to unit mass and linearly rebinned onto one
    uniform grid spanning the union of their ranges, using the finer of the
    two native bin widths.  Disjoint supports simply compare against zeros.
    """
    def native_step(h):
        diffs = np.diff(h.bin_centers)
        return float(np.median(diffs)) if diffs.size else np.inf

    step = min(native_step(a), native_step(b))
    lo = min(a.bin_centers[0], b.bin_centers[0])
    hi = max(a.bin_centers[-1], b.bin_centers[-1])
    if not np.isfinite(step) or step <= 0 or hi <= lo:
        raise InvalidInputError("histograms must span a positive range with >= 2 bins")
    n = int(np.ceil((hi - lo) / step)) + 1
    if n > _MAX_GRID:
        n = _MAX_GRID
    grid = np.linspace(lo, hi, n)
    ga = _rebin(a, grid, grid[1] - grid[0])
    gb = _rebin(b, grid, grid[1] - grid[0])
    diff = ga - gb
    return float(np.mean(np.abs(diff))), float(np.sqrt(np.mean(diff ** 2)))


@dataclass(frozen=True)
class TissueStats:
    """Weighted quartiles of one tissue's intensity values."""

    q1: float
    median: float
    q3: float

    def __post_init__(self):
        if not (self.q1 <= self.median <= self.q3):
            raise InvalidInputError("quartiles must be ordered q1 <= median <= q3")

    def to_dict(self) -> dict:
        return {"q1": self.q1, "median": self.median, "q3": self.q3}


def weighted_quartiles(values, weights) -> TissueStats:
    """Weighted 25/50/75 per cent quantiles via the interpolated CDF."""
    q1, med, q3 = weighted_quantile(values, weights, [0.25, 0.50, 0.75])
    return TissueStats(float(q1), float(med), float(q3))


def qq_points(a: Histogram, b: Histogram, n: int) -> np.ndarray:
    """Paired quantiles of two histograms at ``n`` levels evenly spaced in (0, 1).

    Returns an (n, 2) array of ``(quantile_a, quantile_b)`` rows.
    """
    if n < 2:
        raise InvalidInputError("need at least 2 quantile levels")
    for h in (a, b):
        if np.count_nonzero(h.weights > 0) < 2:
            raise InvalidInputError("degenerate histogram: all mass on one bin")
    levels = (np.arange(n) + 0.5) / n
    qa = weighted_quantile(a.bin_centers, a.weights, levels)
    qb = weighted_quantile(b.bin_centers, b.weights, levels)
    return np.column_stack([qa, qb])


def save_qq_points(points: np.ndarray, path) -> None:
    """Write Q-Q pairs as CSV with header ``qa,qb``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["qa", "qb"])
        for qa, qb in np.asarray(points, dtype=float):
            writer.writerow([repr(float(qa)), repr(float(qb))])


def brown_forsythe(groups) -> tuple[float, float]:
    """Spread-comparison statistic on absolute deviations from group medians.

    Returns the Levene-type F statistic (centred at the medians) and a
    one-tailed p-value.  With two groups the alternative is that the first
    group is more spread out than the second; with more groups the standard
    upper-tail p of the F statistic is returned.
    """
    groups = [np.asarray(g, dtype=float) for g in groups]
    if len(groups) < 2 or any(g.size < 2 for g in groups):
        raise InvalidInputError("need >= 2 groups with >= 2 values each")
    z = [np.abs(g - np.median(g)) for g in groups]
    n = np.array([g.size for g in groups], dtype=float)
    total = n.sum()
    k = len(groups)
    zbar = np.array([zi.mean() for zi in z])
    grand = float(np.concatenate(z).mean())
    between = float(np.sum(n * (zbar - grand) ** 2))
    within = float(sum(np.sum((zi - zb) ** 2) for zi, zb in zip(z, zbar)))
    if within <= 0:
        raise InvalidInputError("within-group deviations are constant; statistic undefined")
    stat = (total - k) / (k - 1) * between / within
    if k == 2:
        # Signed square root of F is the two-sample t on the deviations.
        t = np.sign(zbar[0] - zbar[1]) * np.sqrt(stat)
        p = float(t_dist.sf(t, total - 2))
    else:
        p = float(f_dist.sf(stat, k - 1, total - k))
    return float(stat), p
