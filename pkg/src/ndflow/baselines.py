"""Comparison normalisation methods: affine-only and quantile landmarks.

The landmark method follows the widely used Nyul-style recipe: take the
1st and 99th percentiles plus the deciles of each histogram, average them
over a training population, and map new data through the piecewise-linear
function that sends its own landmarks onto the averaged ones.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .flow import _interp_with_slope_extrapolation
from .histogram import Histogram, weighted_quantile

LANDMARK_LEVELS = np.array([0.01, 0.10, 0.20, 0.30, 0.40, 0.50,
                            0.60, 0.70, 0.80, 0.90, 0.99])


@dataclass(frozen=True)
class LandmarkSet:
    """The 11 quantile landmarks of one histogram (non-decreasing)."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != LANDMARK_LEVELS.shape:
            raise InvalidInputError(f"landmark set must have {LANDMARK_LEVELS.size} entries")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("landmarks must be finite")
        if np.any(np.diff(values) < 0):
            raise InvalidInputError("landmarks must be non-decreasing")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def to_list(self) -> list:
        return [float(v) for v in self.values]


@dataclass(frozen=True)
class PiecewiseLinearMap:
    """Monotone piecewise-linear value map defined by knot pairs."""

    knots_in: np.ndarray
    knots_out: np.ndarray

    def __post_init__(self):
        kin = np.asarray(self.knots_in, dtype=float)
        kout = np.asarray(self.knots_out, dtype=float)
        if kin.ndim != 1 or kin.size != kout.size or kin.size < 2:
            raise InvalidInputError("knot arrays must be 1-D, equal length >= 2")
        if np.any(np.diff(kin) <= 0):
            raise InvalidInputError("input knots must be strictly increasing")
        if np.any(np.diff(kout) < 0):
            raise InvalidInputError("output knots must be non-decreasing")
        kin, kout = kin.copy(), kout.copy()
        kin.setflags(write=False)
        kout.setflags(write=False)
        object.__setattr__(self, "knots_in", kin)
        object.__setattr__(self, "knots_out", kout)

    def to_dict(self) -> dict:
        return {"knots_in": [float(v) for v in self.knots_in],
                "knots_out": [float(v) for v in self.knots_out]}


def extract_landmarks(h: Histogram) -> LandmarkSet:
    """Weighted quantile landmarks of a histogram at the 11 standard levels."""
    if np.count_nonzero(h.weights > 0) < 2:
        raise InvalidInputError("landmarks need at least two bins with mass")
    return LandmarkSet(weighted_quantile(h.bin_centers, h.weights, LANDMARK_LEVELS))


def average_landmarks(sets) -> LandmarkSet:
    """Element-wise mean of landmark sets (means of monotone vectors stay monotone)."""
    sets = list(sets)
    if not sets:
        raise InvalidInputError("need at least one landmark set")
    return LandmarkSet(np.mean([s.values for s in sets], axis=0))


def build_piecewise(src: LandmarkSet, tgt: LandmarkSet) -> PiecewiseLinearMap:
    """Map sending the source landmarks onto the target landmarks."""
    if np.any(np.diff(src.values) <= 0):
        raise InvalidInputError("source landmarks are tied; map would be degenerate")
    return PiecewiseLinearMap(src.values, tgt.values)


def apply_piecewise(m: PiecewiseLinearMap, values) -> np.ndarray:
    """Piecewise-linear interpolation between knots, boundary slopes outside."""
    scalar = np.ndim(values) == 0
    out = _interp_with_slope_extrapolation(np.atleast_1d(values), m.knots_in, m.knots_out)
    return float(out[0]) if scalar else out


def nyul_normalise(subject: Histogram, reference: LandmarkSet, values) -> np.ndarray:
    """Map values through the subject-landmarks-to-reference piecewise map."""
    return apply_piecewise(build_piecewise(extract_landmarks(subject), reference), values)


def save_piecewise_map(m: PiecewiseLinearMap, path) -> None:
    """Write a piecewise map at its knots in the shared ``x,fx`` CSV format."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "fx"])
        for x, fx in zip(m.knots_in, m.knots_out):
            writer.writerow([repr(float(x)), repr(float(fx))])


def save_landmarks(s: LandmarkSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(s.to_list(), fh)
        fh.write("\n")


def load_landmarks(path) -> LandmarkSet:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            values = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"{path}: not valid JSON: {exc}") from exc
    return LandmarkSet(np.asarray(values, dtype=float))
