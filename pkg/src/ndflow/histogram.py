"""Weighted 1-D histograms: ingestion, moments and affine (re)scaling.

A histogram is a set of strictly increasing bin centres with non-negative
weights.  Weights need not be integers, so probability-weighted statistics
are supported throughout.  All operations are pure; histograms and affine
maps are immutable after construction.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True)
class AffineMap:
    """Orientation-preserving affine value map ``x -> scale * x + offset``."""

    scale: float
    offset: float

    def __post_init__(self):
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise InvalidInputError(f"affine scale must be finite and > 0, got {self.scale}")
        if not np.isfinite(self.offset):
            raise InvalidInputError(f"affine offset must be finite, got {self.offset}")

    def __call__(self, values):
        return self.scale * np.asarray(values, dtype=float) + self.offset

    def invert(self) -> "AffineMap":
        return AffineMap(1.0 / self.scale, -self.offset / self.scale)

    def compose(self, inner: "AffineMap") -> "AffineMap":
        """Map applying ``inner`` first, then ``self``."""
        return AffineMap(self.scale * inner.scale, self.scale * inner.offset + self.offset)

    @staticmethod
    def identity() -> "AffineMap":
        return AffineMap(1.0, 0.0)


class Histogram:
    """Bin centres plus non-negative weights with positive total mass."""

    __slots__ = ("bin_centers", "weights")

    def __init__(self, bin_centers, weights):
        centers = np.asarray(bin_centers, dtype=float)
        w = np.asarray(weights, dtype=float)
        if centers.ndim != 1 or w.ndim != 1 or centers.size != w.size:
            raise InvalidInputError("bin_centers and weights must be 1-D and the same length")
        if centers.size == 0:
            raise InvalidInputError("histogram must have at least one bin")
        if not np.all(np.isfinite(centers)) or not np.all(np.isfinite(w)):
            raise InvalidInputError("histogram entries must be finite")
        if np.any(np.diff(centers) <= 0):
            raise InvalidInputError("bin_centers must be strictly increasing")
        if np.any(w < 0):
            raise InvalidInputError("weights must be non-negative")
        if w.sum() <= 0:
            raise InvalidInputError("total weight must be positive")
        centers = centers.copy()
        w = w.copy()
        centers.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "bin_centers", centers)
        object.__setattr__(self, "weights", w)

    def __setattr__(self, name, value):
        raise AttributeError("Histogram is immutable")

    def __len__(self):
        return self.bin_centers.size

    def __repr__(self):
        return f"Histogram({len(self)} bins, total weight {self.total_weight():.6g})"

    def total_weight(self) -> float:
        return float(self.weights.sum())

    def normalized(self) -> "Histogram":
        """Same bins with weights rescaled to unit total mass."""
        return Histogram(self.bin_centers, self.weights / self.weights.sum())

    def affine(self, m: AffineMap) -> "Histogram":
        """Histogram of the affinely transformed values (scale > 0 keeps order)."""
        return Histogram(m(self.bin_centers), self.weights)


def compute_moments(h: Histogram) -> tuple[float, float]:
    """Weighted mean and central second moment of a histogram."""
    w = h.weights / h.weights.sum()
    mean = float(np.dot(w, h.bin_centers))
    var = float(np.dot(w, (h.bin_centers - mean) ** 2))
    return mean, max(var, 0.0)


def affine_match(src_moments, tgt_moments) -> AffineMap:
    """Affine map sending the source (mean, variance) onto the target's.

    Solves ``a * src_mean + b = tgt_mean`` and ``a**2 * src_var = tgt_var``
    with a > 0.
    """
    src_mean, src_var = src_moments
    tgt_mean, tgt_var = tgt_moments
    if not (src_var > 0 and tgt_var > 0):
        raise InvalidInputError(
            f"moment matching needs positive variances, got {src_var} and {tgt_var}"
        )
    scale = float(np.sqrt(tgt_var / src_var))
    offset = float(tgt_mean - scale * src_mean)
    return AffineMap(scale, offset)


def standardize(h: Histogram) -> tuple[Histogram, AffineMap]:
    """Rescale a histogram to zero mean and unit variance.

    Returns the transformed histogram and the affine map that was applied
    to its bin centres.
    """
    m = affine_match(compute_moments(h), (0.0, 1.0))
    return h.affine(m), m


def apply_affine(m: AffineMap, values) -> np.ndarray:
    """Element-wise ``scale * x + offset``; order of values is preserved."""
    return m(values)


def weighted_quantile(values, weights, probs) -> np.ndarray:
    """Quantiles of weighted data via the interpolated empirical CDF.

    Uses plotting positions ``(cumsum(w) - (1 - p) * w) / sum(w)``, which for
    uniform weights reproduces the linear interpolation of numpy's default
    quantile method.  Zero-weight entries are ignored.
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if values.shape != weights.shape or values.ndim != 1:
        raise InvalidInputError("values and weights must be 1-D and the same length")
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise InvalidInputError("weights must be finite and non-negative")
    keep = weights > 0
    if not np.any(keep):
        raise InvalidInputError("total weight must be positive")
    values = values[keep]
    weights = weights[keep]
    order = np.argsort(values, kind="stable")
    values = values[order]
    weights = weights[order]
    cum = np.cumsum(weights)
    total = cum[-1]
    probs_arr = np.atleast_1d(np.asarray(probs, dtype=float))
    if np.any((probs_arr < 0) | (probs_arr > 1)):
        raise InvalidInputError("quantile levels must lie in [0, 1]")
    out = np.empty(probs_arr.shape, dtype=float)
    for i, p in enumerate(probs_arr):
        positions = (cum - (1.0 - p) * weights) / total
        out[i] = np.interp(p, positions, values)
    if np.isscalar(probs) or np.ndim(probs) == 0:
        return float(out[0])
    return out


def histogram_from_values(values, weights=None, bins: int = 256,
                          value_range=None) -> Histogram:
    """Bin a stream of values into a uniform histogram.

    ``weights`` are per-value observation weights (default 1).  The returned
    bin centres are the midpoints of ``bins`` equal-width intervals covering
    ``value_range`` (default: the data range).
    """
    values = np.asarray(values, dtype=float)
    if values.ndim != 1 or values.size == 0:
        raise InvalidInputError("values must be a non-empty 1-D array")
    if not np.all(np.isfinite(values)):
        raise InvalidInputError("values must be finite")
    counts, edges = np.histogram(values, bins=bins, range=value_range, weights=weights)
    centers = 0.5 * (edges[:-1] + edges[1:])
    if counts.sum() <= 0:
        raise InvalidInputError("no values fall inside the histogram range")
    return Histogram(centers, counts.astype(float))


def save_histogram(h: Histogram, path) -> None:
    """Write a histogram as CSV with header ``center,weight``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["center", "weight"])
        for c, w in zip(h.bin_centers, h.weights):
            writer.writerow([repr(float(c)), repr(float(w))])


def load_histogram(path) -> Histogram:
    """Read a ``center,weight`` CSV written by :func:`save_histogram`."""
    centers, weights = [], []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip().lower() for c in header[:2]] != ["center", "weight"]:
            raise InvalidInputError(f"{path}: expected CSV header 'center,weight'")
        for row in reader:
            if not row:
                continue
            try:
                centers.append(float(row[0]))
                weights.append(float(row[1]))
            except (ValueError, IndexError) as exc:
                raise InvalidInputError(f"{path}: malformed row {row!r}") from exc
    if not centers:
        raise InvalidInputError(f"{path}: no histogram rows")
    return Histogram(centers, weights)


def save_values(values, path) -> None:
    """Write a value stream, one real per line."""
    values = np.asarray(values, dtype=float)
    with open(path, "w", encoding="utf-8") as fh:
        for v in values:
            fh.write(repr(float(v)) + "\n")


def load_values(path) -> np.ndarray:
    """Read a value stream written by :func:`save_values`."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(float(line))
            except ValueError as exc:
                raise InvalidInputError(f"{path}:{line_no}: not a number: {line!r}") from exc
    if not out:
        raise InvalidInputError(f"{path}: no values")
    return np.asarray(out, dtype=float)
