"""End-to-end density-flow normalisation of one value stream.

Composes the three stages in their canonical order: affine moment
alignment of the source mixture (and data) to the target, divergence
minimisation of the aligned mixture, and the mass-conserving flow that
carries the data along the matched parameter path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dpgmm import GaussianMixture
from .errors import InvalidInputError
from .flow import (ParameterPath, TransformTable, apply_inverse_transform,
                   apply_transform, integrate_flow)
from .histogram import AffineMap, affine_match
from .l2match import MatchResult, OptimConfig, match_mixtures


@dataclass(frozen=True)
class NormalisationResult:
    """Affine pre-map plus the nonlinear table that follows it."""

    affine: AffineMap
    match: MatchResult
    table: TransformTable

    def apply(self, values) -> np.ndarray:
        return apply_transform(self.table, self.affine(values))

    def apply_inverse(self, values) -> np.ndarray:
        back = apply_inverse_transform(self.table, values)
        return self.affine.invert()(back)


def default_mesh_range(mixture: GaussianMixture, data=None,
                       margin_stds: float = 3.0) -> tuple[float, float]:
    """Mesh bounds: the data range (or the mixture's +-4 sigma envelope when
    no data is given) widened by ``margin_stds`` mixture standard deviations."""
    _, var = mixture.moments()
    margin, sd = margin_stds * float(np.sqrt(var)), 1.0 / np.sqrt(mixture.precisions)
    if data is not None:
        data = np.asarray(data, dtype=float)
        lo, hi = float(data.min()), float(data.max())
    else:
        lo = float(np.min(mixture.means - 4.0 * sd))
        hi = float(np.max(mixture.means + 4.0 * sd))
    return lo - margin, hi + margin


def match_and_flow(source: GaussianMixture, target: GaussianMixture,
                   optim: OptimConfig | None = None,
                   data=None,
                   mesh_range: tuple[float, float] | None = None,
                   mesh_points: int = 200,
                   rk4_steps: int = 32,
                   mesh_margin_stds: float = 3.0) -> NormalisationResult:
    """Normalise towards ``target``: affine moment alignment, then the flow.

    ``data``, when given, determines the default mesh range (in source
    units; the affine pre-map is applied internally) and should be the
    values the transform will be applied to.
    """
    pre = affine_match(source.moments(), target.moments())
    aligned = source.affine(pre)
    result = match_mixtures(aligned, target, optim)
    path = ParameterPath.from_match(result)
    if mesh_range is None:
        aligned_data = pre(data) if data is not None else None
        mesh_range = default_mesh_range(aligned, aligned_data, mesh_margin_stds)
    lo, hi = mesh_range
    if not lo < hi:
        raise InvalidInputError(f"empty mesh range ({lo}, {hi})")
    table = integrate_flow(path, lo, hi, mesh_points, rk4_steps)
    return NormalisationResult(pre, result, table)
