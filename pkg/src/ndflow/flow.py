"""Mass-conserving flows that transport values alongside a moving mixture.

Given start and end mixture parameters (weights fixed), the parameters are
interpolated linearly in a virtual time ``t in [0, 1]``.  Each component
induces an affine velocity on its own samples; blending the component
velocities with the posterior assignment probabilities of the time-``t``
mixture yields a global velocity field whose flow pushes the start density
exactly onto the end density.  The flow map is integrated with classic
fixed-step RK4 on a uniform mesh and applied to data by piecewise-linear
interpolation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .dpgmm import GaussianMixture
from .errors import InvalidInputError, NumericalError
from .l2match import MatchResult

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class ParameterPath:
    """Linear path between two parameterisations of one mixture family."""

    weights: np.ndarray
    means_start: np.ndarray
    means_end: np.ndarray
    precisions_start: np.ndarray
    precisions_end: np.ndarray

    def __post_init__(self):
        arrays = {}
        for name in ("weights", "means_start", "means_end",
                     "precisions_start", "precisions_end"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim != 1 or arr.size != np.asarray(self.weights).size:
                raise InvalidInputError("path arrays must be 1-D and the same length")
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError(f"{name} must be finite")
            arrays[name] = arr
        if np.any(arrays["weights"] <= 0) or abs(arrays["weights"].sum() - 1.0) > 1e-12:
            raise InvalidInputError("weights must be positive and sum to 1")
        # Linear interpolation keeps precisions positive iff both ends are.
        if np.any(arrays["precisions_start"] <= 0) or np.any(arrays["precisions_end"] <= 0):
            raise InvalidInputError("precisions must be positive at both endpoints")
        for name, arr in arrays.items():
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_match(cls, result: MatchResult) -> "ParameterPath":
        """Path from a match result's initial mixture to its optimum."""
        g = result.initial
        return cls(g.weights, g.means, result.optimized_means,
                   g.precisions, result.optimized_precisions)

    def mixture_at(self, t: float) -> GaussianMixture:
        """Mixture with parameters interpolated at time ``t``."""
        return GaussianMixture(self.weights,
                               (1.0 - t) * self.means_start + t * self.means_end,
                               (1.0 - t) * self.precisions_start + t * self.precisions_end)

    def _interpolated(self, t: float):
        mu = (1.0 - t) * self.means_start + t * self.means_end
        lam = (1.0 - t) * self.precisions_start + t * self.precisions_end
        return mu, lam

    def _rates(self):
        return self.means_end - self.means_start, self.precisions_end - self.precisions_start


def component_velocity(path: ParameterPath, k: int, t: float, x) -> float | np.ndarray:
    """Velocity of component ``k``'s samples at time ``t`` and position ``x``.

    Affine in ``x``: a translation at the rate of the component mean plus a
    contraction/dilation about the mean driven by the precision rate.
    """
    if not 0.0 <= t <= 1.0:
        raise InvalidInputError(f"t must lie in [0, 1], got {t}")
    mu, lam = path._interpolated(t)
    dmu, dlam = path._rates()
    x = np.asarray(x, dtype=float)
    out = dmu[k] - 0.5 * dlam[k] / lam[k] * (x - mu[k])
    return float(out) if out.ndim == 0 else out


def mixture_velocity(path: ParameterPath, t: float, x) -> float | np.ndarray:
    """Mass-conserving mixture velocity: responsibility-weighted blend.

    Computed in the log domain, so far in the tails the blend degenerates
    smoothly to the velocity of the dominant (closest) component rather
    than suffering density underflow.
    """
    if not 0.0 <= t <= 1.0:
        raise InvalidInputError(f"t must lie in [0, 1], got {t}")
    scalar = np.ndim(x) == 0
    x = np.atleast_1d(np.asarray(x, dtype=float))
    mu, lam = path._interpolated(t)
    dmu, dlam = path._rates()
    z = x[:, None] - mu[None, :]
    logd = (np.log(path.weights)[None, :]
            + 0.5 * (np.log(lam) - _LOG_2PI)[None, :]
            - 0.5 * lam[None, :] * z * z)
    resp = np.exp(logd - logsumexp(logd, axis=1, keepdims=True))
    u_comp = dmu[None, :] - 0.5 * (dlam / lam)[None, :] * z
    out = (resp * u_comp).sum(axis=1)
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class TransformTable:
    """Monotone map sampled on a uniform mesh, linearly interpolated."""

    mesh: np.ndarray
    mapped: np.ndarray

    def __post_init__(self):
        mesh = np.asarray(self.mesh, dtype=float)
        mapped = np.asarray(self.mapped, dtype=float)
        if mesh.ndim != 1 or mesh.size != mapped.size or mesh.size < 2:
            raise InvalidInputError("mesh and mapped must be 1-D, equal length >= 2")
        if not (np.all(np.isfinite(mesh)) and np.all(np.isfinite(mapped))):
            raise InvalidInputError("table entries must be finite")
        if np.any(np.diff(mesh) <= 0):
            raise InvalidInputError("mesh must be strictly increasing")
        if np.any(np.diff(mapped) <= 0):
            raise InvalidInputError("mapped values must be strictly increasing")
        mesh, mapped = mesh.copy(), mapped.copy()
        mesh.setflags(write=False)
        mapped.setflags(write=False)
        object.__setattr__(self, "mesh", mesh)
        object.__setattr__(self, "mapped", mapped)


def integrate_flow(path: ParameterPath, mesh_min: float, mesh_max: float,
                   mesh_points: int = 200, rk4_steps: int = 32) -> TransformTable:
    """Advance every mesh point through the flow ODE with fixed-step RK4.

    The exact flow is a diffeomorphism, so a non-monotone result can only
    be a discretisation artefact; it raises a numerical error suggesting
    more steps.
    """
    if mesh_points < 2:
        raise InvalidInputError("mesh_points must be >= 2")
    if rk4_steps < 1:
        raise InvalidInputError("rk4_steps must be >= 1")
    if not mesh_min < mesh_max:
        raise InvalidInputError("mesh_min must be < mesh_max")
    mesh = np.linspace(mesh_min, mesh_max, mesh_points)
    y = mesh.copy()
    h = 1.0 / rk4_steps
    for j in range(rk4_steps):
        t = j * h
        k1 = mixture_velocity(path, t, y)
        k2 = mixture_velocity(path, t + 0.5 * h, y + 0.5 * h * k1)
        k3 = mixture_velocity(path, t + 0.5 * h, y + 0.5 * h * k2)
        k4 = mixture_velocity(path, min(t + h, 1.0), y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(y)):
        raise NumericalError("flow integration produced non-finite values")
    if np.any(np.diff(y) <= 0):
        raise NumericalError(
            "integrated transform is not strictly increasing; "
            "increase rk4_steps to resolve the flow"
        )
    return TransformTable(mesh, y)


def _interp_with_slope_extrapolation(x, xp, yp):
    """np.interp plus linear continuation of the boundary segments."""
    x = np.asarray(x, dtype=float)
    y = np.interp(x, xp, yp)
    lo = x < xp[0]
    if np.any(lo):
        slope = (yp[1] - yp[0]) / (xp[1] - xp[0])
        y = np.where(lo, yp[0] + (x - xp[0]) * slope, y)
    hi = x > xp[-1]
    if np.any(hi):
        slope = (yp[-1] - yp[-2]) / (xp[-1] - xp[-2])
        y = np.where(hi, yp[-1] + (x - xp[-1]) * slope, y)
    return y


def apply_transform(tbl: TransformTable, values) -> np.ndarray:
    """Map values through the table; outside the mesh the boundary segment
    slopes continue linearly."""
    scalar = np.ndim(values) == 0
    out = _interp_with_slope_extrapolation(np.atleast_1d(values), tbl.mesh, tbl.mapped)
    return float(out[0]) if scalar else out


def apply_inverse_transform(tbl: TransformTable, values) -> np.ndarray:
    """Map values through the exact inverse of the table.

    The piecewise-linear forward map is inverted by interpolating with the
    axes swapped, so ``apply_inverse_transform(t, apply_transform(t, x))``
    returns ``x`` up to rounding for any strictly increasing table.
    """
    scalar = np.ndim(values) == 0
    out = _interp_with_slope_extrapolation(np.atleast_1d(values), tbl.mapped, tbl.mesh)
    return float(out[0]) if scalar else out


def invert_transform(tbl: TransformTable) -> TransformTable:
    """Table of the inverse map, resampled on a uniform mesh of equal size.

    Exact for affine tables; otherwise correct up to the piecewise-linear
    interpolation error of the resampling.  To apply the inverse to values
    without that resampling error, use :func:`apply_inverse_transform`.
    """
    new_mesh = np.linspace(tbl.mapped[0], tbl.mapped[-1], tbl.mesh.size)
    new_mapped = np.interp(new_mesh, tbl.mapped, tbl.mesh)
    # Uniform resampling of a flat-in-float64 region could produce ties;
    # the table invariant requires strict monotonicity.
    if np.any(np.diff(new_mapped) <= 0):
        raise NumericalError("inverse table is not strictly increasing")
    return TransformTable(new_mesh, new_mapped)


def save_table(tbl: TransformTable, path) -> None:
    """Write a transform table as CSV with header ``x,fx``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "fx"])
        for xv, fv in zip(tbl.mesh, tbl.mapped):
            writer.writerow([repr(float(xv)), repr(float(fv))])


def load_table(path) -> TransformTable:
    """Read an ``x,fx`` CSV written by :func:`save_table`."""
    xs, fs = [], []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip().lower() for c in header[:2]] != ["x", "fx"]:
            raise InvalidInputError(f"{path}: expected CSV header 'x,fx'")
        for row in reader:
            if not row:
                continue
            try:
                xs.append(float(row[0]))
                fs.append(float(row[1]))
            except (ValueError, IndexError) as exc:
                raise InvalidInputError(f"{path}: malformed row {row!r}") from exc
    if len(xs) < 2:
        raise InvalidInputError(f"{path}: need at least two table rows")
    return TransformTable(xs, fs)
