"""Synthetic multi-centre cohorts with known monotone intensity distortions.

Each centre owns a strictly monotone value distortion (affine part plus a
few bounded sigmoid bumps); each subject draws from a jittered copy of a
shared base mixture and pushes the draws through its centre's distortion.
Because the ground truth is known, normalisation quality can be judged
against the distortion inverse and against the undistorted base density.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .baselines import average_landmarks, extract_landmarks, nyul_normalise
from .dpgmm import DpgmmConfig, GaussianMixture, fit_dpgmm
from .errors import InvalidInputError
from .evalmetrics import histogram_discrepancy, weighted_quartiles
from .histogram import (Histogram, affine_match, apply_affine, compute_moments,
                        histogram_from_values, standardize)
from .l2match import OptimConfig
from .pipeline import match_and_flow

METHODS = ("affine", "ndflow_centre", "ndflow_individual", "nyul")


@dataclass(frozen=True)
class Distortion:
    """Monotone value distortion: affine part plus scaled sigmoid bumps.

    Each bump is ``height * expit((x - center) / width)``.  A sigmoid's
    slope is at most ``1/4``, so ``scale > sum(|height| / (4 * width))``
    guarantees a strictly positive derivative everywhere.
    """

    scale: float = 1.0
    offset: float = 0.0
    bumps: tuple = ()

    def __post_init__(self):
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise InvalidInputError("distortion scale must be positive")
        bumps = tuple((float(h), float(c), float(w)) for h, c, w in self.bumps)
        if any(w <= 0 for _, _, w in bumps):
            raise InvalidInputError("bump widths must be positive")
        object.__setattr__(self, "bumps", bumps)

    def is_globally_monotone(self) -> bool:
        """True when the conservative slope bound guarantees monotonicity."""
        return self.scale > sum(abs(h) / (4.0 * w) for h, _, w in self.bumps)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = self.scale * x + self.offset
        for h, c, w in self.bumps:
            out = out + h * expit((x - c) / w)
        return out

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        out = np.full_like(x, self.scale)
        for h, c, w in self.bumps:
            s = expit((x - c) / w)
            out = out + (h / w) * s * (1.0 - s)
        return out

    def invert(self, y, tolerance: float = 1e-12, max_iterations: int = 200):
        """Invert by bisection (requires monotonicity over the bracket)."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        span = sum(abs(h) for h, _, _ in self.bumps)
        lo = np.full_like(y, (y.min() - abs(self.offset) - span) / self.scale - 1.0)
        hi = np.full_like(y, (y.max() + abs(self.offset) + span) / self.scale + 1.0)
        for _ in range(max_iterations):
            mid = 0.5 * (lo + hi)
            below = self(mid) < y
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.max(hi - lo) < tolerance:
                break
        return 0.5 * (lo + hi)

    def to_dict(self) -> dict:
        return {"scale": self.scale, "offset": self.offset,
                "bumps": [list(b) for b in self.bumps]}

    @classmethod
    def from_dict(cls, d: dict) -> "Distortion":
        try:
            return cls(float(d.get("scale", 1.0)), float(d.get("offset", 0.0)),
                       tuple(tuple(b) for b in d.get("bumps", ())))
        except (TypeError, ValueError) as exc:
            raise InvalidInputError(f"malformed distortion object: {exc}") from exc


@dataclass(frozen=True)
class CohortSpec:
    """Layout of a synthetic cohort; fully determines it given the seed."""

    base_mixture: GaussianMixture
    centre_distortions: tuple
    n_centres: int = 3
    subjects_per_centre: int = 30
    subject_jitter: float = 0.02
    samples_per_subject: int = 200_000
    seed: int = 0

    def __post_init__(self):
        if self.n_centres < 1 or self.subjects_per_centre < 1 or self.samples_per_subject < 1:
            raise InvalidInputError("cohort counts must be >= 1")
        if len(self.centre_distortions) != self.n_centres:
            raise InvalidInputError("need exactly one distortion per centre")
        if self.subject_jitter < 0:
            raise InvalidInputError("subject_jitter must be >= 0")

    def to_dict(self) -> dict:
        return {
            "base_mixture": self.base_mixture.to_dict(),
            "centre_distortions": [d.to_dict() for d in self.centre_distortions],
            "n_centres": self.n_centres,
            "subjects_per_centre": self.subjects_per_centre,
            "subject_jitter": self.subject_jitter,
            "samples_per_subject": self.samples_per_subject,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CohortSpec":
        try:
            return cls(
                base_mixture=GaussianMixture.from_dict(d["base_mixture"]),
                centre_distortions=tuple(Distortion.from_dict(x)
                                         for x in d["centre_distortions"]),
                n_centres=int(d.get("n_centres", len(d["centre_distortions"]))),
                subjects_per_centre=int(d.get("subjects_per_centre", 30)),
                subject_jitter=float(d.get("subject_jitter", 0.02)),
                samples_per_subject=int(d.get("samples_per_subject", 200_000)),
                seed=int(d.get("seed", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"malformed cohort spec: {exc}") from exc


def default_cohort_spec(**overrides) -> CohortSpec:
    """Three-centre cohort over a low/mid/high three-component base.

    The centre distortions are mild, mutually different nonlinearities that
    concentrate around the mid and high intensity regions, mimicking
    scanner-dependent contrast differences.
    """
    base = GaussianMixture(
        weights=[0.18, 0.45, 0.37],
        means=[-1.85, 0.10, 1.15],
        precisions=[1.0 / 0.42 ** 2, 1.0 / 0.52 ** 2, 1.0 / 0.38 ** 2],
    )
    distortions = (
        Distortion(1.00, 0.00, ()),
        Distortion(1.06, -0.10, ((0.45, 0.60, 0.90), (-0.25, -1.20, 1.10))),
        Distortion(0.94, 0.12, ((-0.40, 0.90, 1.00), (0.30, -0.60, 1.20))),
    )
    params = dict(base_mixture=base, centre_distortions=distortions)
    params.update(overrides)
    return CohortSpec(**params)


@dataclass(frozen=True)
class Subject:
    """One generated subject: distorted draws plus their source components."""

    centre_id: int
    subject_id: int
    values: np.ndarray = field(repr=False)
    tissue_labels: np.ndarray = field(repr=False)


def _jittered(base: GaussianMixture, jitter: float, rng) -> GaussianMixture:
    if jitter == 0:
        return base
    k = len(base)
    sd = 1.0 / np.sqrt(base.precisions)
    means = base.means + jitter * sd * rng.standard_normal(k)
    precisions = base.precisions * np.exp(jitter * rng.standard_normal(k))
    weights = base.weights * np.exp(jitter * rng.standard_normal(k))
    return GaussianMixture(weights / weights.sum(), means, precisions)


def generate_cohort(spec: CohortSpec) -> list[Subject]:
    """Deterministically generate all subjects of a cohort.

    Every subject gets an independent child seed derived from the cohort
    seed, so generation order (or parallel execution) cannot change the
    output.  Each centre's distortion is verified to be strictly monotone
    over the realised sample range.
    """
    streams = np.random.SeedSequence(spec.seed).spawn(
        spec.n_centres * spec.subjects_per_centre)
    cohort = []
    for centre in range(spec.n_centres):
        distortion = spec.centre_distortions[centre]
        for subj in range(spec.subjects_per_centre):
            rng = np.random.default_rng(streams[centre * spec.subjects_per_centre + subj])
            mix = _jittered(spec.base_mixture, spec.subject_jitter, rng)
            labels = rng.choice(len(mix), size=spec.samples_per_subject, p=mix.weights)
            raw = rng.normal(mix.means[labels], 1.0 / np.sqrt(mix.precisions[labels]))
            grid = np.linspace(raw.min(), raw.max(), 512)
            if np.any(distortion.derivative(grid) <= 0):
                raise InvalidInputError(
                    f"centre {centre} distortion is not monotone over the sample range"
                )
            cohort.append(Subject(centre, subj, distortion(raw), labels))
    return cohort


def export_cohort(cohort, spec: CohortSpec, directory) -> str:
    """Write one ``value,label`` CSV per subject plus a manifest JSON.

    Returns the manifest path.
    """
    os.makedirs(directory, exist_ok=True)
    entries = []
    for s in cohort:
        name = f"centre{s.centre_id:02d}_subject{s.subject_id:03d}.csv"
        path = os.path.join(directory, name)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["value", "label"])
            for v, l in zip(s.values, s.tissue_labels):
                writer.writerow([repr(float(v)), int(l)])
        entries.append({"centre": s.centre_id, "subject": s.subject_id, "path": name})
    manifest = os.path.join(directory, "manifest.json")
    with open(manifest, "w", encoding="utf-8") as fh:
        json.dump({"spec": spec.to_dict(), "subjects": entries}, fh, sort_keys=True)
        fh.write("\n")
    return manifest


class CohortArtifacts:
    """Per-subject standardisations, histograms and cached mixture fits.

    Shared across methods so that comparing several normalisations of one
    cohort does not repeat the expensive steps.
    """

    def __init__(self, cohort, bins: int = 256, dpgmm: DpgmmConfig | None = None,
                 target: GaussianMixture | None = None):
        self.cohort = list(cohort)
        if not self.cohort:
            raise InvalidInputError("cohort is empty")
        self.dpgmm = dpgmm if dpgmm is not None else DpgmmConfig()
        self.bins = bins
        self.hists_std = []
        self.values_std = []
        self.standardizers = []
        for s in self.cohort:
            h = histogram_from_values(s.values, bins=bins)
            h_std, to_std = standardize(h)
            self.hists_std.append(h_std)
            self.standardizers.append(to_std)
            self.values_std.append(to_std(s.values))
        self._fits: dict[int, GaussianMixture] = {}
        self._consistent_fits: dict[int, GaussianMixture] = {}
        self._target = target
        self._target_hist = None
        self._centre_refs: dict[int, GaussianMixture] = {}

    def fit(self, index: int) -> GaussianMixture:
        if index not in self._fits:
            self._fits[index] = fit_dpgmm(self.hists_std[index], self.dpgmm)
        return self._fits[index]

    def fit_consistent(self, index: int) -> GaussianMixture:
        """Subject fit warm-started from the global reference.

        Re-fitting from the (moment-aligned) reference keeps the component
        structure of all subjects consistent with the target, which makes
        the fixed-weight divergence matching well-posed.
        """
        if index not in self._consistent_fits:
            ref = self.target()
            warm = ref.affine(affine_match(ref.moments(),
                                           compute_moments(self.hists_std[index])))
            self._consistent_fits[index] = fit_dpgmm(self.hists_std[index],
                                                     self.dpgmm, init=warm)
        return self._consistent_fits[index]

    def _density_grid(self) -> np.ndarray:
        lo = min(h.bin_centers[0] for h in self.hists_std)
        hi = max(h.bin_centers[-1] for h in self.hists_std)
        return np.linspace(lo, hi, 512)

    def _average_density_hist(self, indices) -> Histogram:
        grid = self._density_grid()
        pdf = np.zeros_like(grid)
        for i in indices:
            pdf += self.fit(i).pdf(grid)
        pdf /= len(indices)
        # Scaled to a realistic effective count so the reference fit is
        # dominated by the averaged density, not by its prior.
        scale = np.mean([h.total_weight() for h in self.hists_std])
        return Histogram(grid, pdf * scale * (grid[1] - grid[0]))

    def target(self) -> GaussianMixture:
        """Global reference mixture (fitted to the cohort average density
        unless an explicit target was supplied)."""
        if self._target is None:
            indices = range(len(self.cohort))
            self._target = fit_dpgmm(self._average_density_hist(indices), self.dpgmm)
        return self._target

    def target_histogram(self) -> Histogram:
        """Average standardised density, binned; the Fig-style reference."""
        if self._target_hist is None:
            indices = range(len(self.cohort))
            self._target_hist = self._average_density_hist(indices).normalized()
        return self._target_hist

    def centre_reference(self, centre: int) -> GaussianMixture:
        if centre not in self._centre_refs:
            indices = [i for i, s in enumerate(self.cohort) if s.centre_id == centre]
            if not indices:
                raise InvalidInputError(f"cohort has no centre {centre}")
            hist = self._average_density_hist(indices)
            ref = self.target()
            warm = ref.affine(affine_match(ref.moments(), compute_moments(hist)))
            self._centre_refs[centre] = fit_dpgmm(hist, self.dpgmm, init=warm)
        return self._centre_refs[centre]


def run_normalisation_experiment(cohort, method: str,
                                 artifacts: CohortArtifacts | None = None,
                                 target: GaussianMixture | None = None,
                                 bins: int = 256,
                                 dpgmm: DpgmmConfig | None = None,
                                 optim: OptimConfig | None = None,
                                 mesh_points: int = 200,
                                 rk4_steps: int = 32,
                                 include_transforms: bool = False) -> dict:
    """Normalise every subject with one method and report tissue statistics.

    Subjects are first standardised; the selected method then maps the
    standardised values towards the global reference (the cohort's average
    density unless ``target`` is given).  The report contains per-subject
    weighted tissue quartiles, their cross-subject standard deviations, and
    the mean histogram MAE/RMSE against the reference density.
    """
    if method not in METHODS:
        raise InvalidInputError(f"unknown method {method!r}; choose from {METHODS}")
    if artifacts is None:
        artifacts = CohortArtifacts(cohort, bins=bins, dpgmm=dpgmm, target=target)

    subjects = artifacts.cohort
    transformed: list[np.ndarray] = []
    transforms: list[dict] = []

    if method == "nyul":
        marks = [extract_landmarks(h) for h in artifacts.hists_std]
        reference = average_landmarks(marks)
        for i, h in enumerate(artifacts.hists_std):
            transformed.append(nyul_normalise(h, reference, artifacts.values_std[i]))
    elif method == "affine":
        tgt_moments = artifacts.target().moments()
        for i, h in enumerate(artifacts.hists_std):
            m = affine_match(compute_moments(h), tgt_moments)
            transformed.append(apply_affine(m, artifacts.values_std[i]))
    else:
        tgt = artifacts.target()
        if method == "ndflow_centre":
            centre_results = {}
            for i, s in enumerate(subjects):
                if s.centre_id not in centre_results:
                    centre_values = np.concatenate(
                        [artifacts.values_std[j] for j, t in enumerate(subjects)
                         if t.centre_id == s.centre_id])
                    lo, hi = np.quantile(centre_values, [0.001, 0.999])
                    centre_results[s.centre_id] = match_and_flow(
                        artifacts.centre_reference(s.centre_id), tgt, optim,
                        mesh_range=(float(lo), float(hi)),
                        mesh_points=mesh_points, rk4_steps=rk4_steps)
                res = centre_results[s.centre_id]
                transformed.append(res.apply(artifacts.values_std[i]))
                transforms.append(_transform_record(artifacts.standardizers[i], res))
        else:  # ndflow_individual
            for i, s in enumerate(subjects):
                values = artifacts.values_std[i]
                lo, hi = np.quantile(values, [0.001, 0.999])
                res = match_and_flow(artifacts.fit_consistent(i), tgt, optim,
                                     mesh_range=(float(lo), float(hi)),
                                     mesh_points=mesh_points, rk4_steps=rk4_steps)
                transformed.append(res.apply(values))
                transforms.append(_transform_record(artifacts.standardizers[i], res))

    target_hist = artifacts.target_histogram()
    tissues = sorted(set(int(t) for s in subjects for t in np.unique(s.tissue_labels)))
    per_subject = []
    for i, s in enumerate(subjects):
        row = {"centre": int(s.centre_id), "subject": int(s.subject_id), "tissues": {}}
        for tissue in tissues:
            mask = s.tissue_labels == tissue
            if not np.any(mask):
                continue
            stats = weighted_quartiles(transformed[i][mask], np.ones(int(mask.sum())))
            row["tissues"][str(tissue)] = stats.to_dict()
        mae, rmse = histogram_discrepancy(
            histogram_from_values(transformed[i], bins=artifacts.bins), target_hist)
        row["mae"], row["rmse"] = mae, rmse
        per_subject.append(row)

    spread = {}
    for tissue in tissues:
        key = str(tissue)
        spread[key] = {}
        for stat in ("q1", "median", "q3"):
            vals = [row["tissues"][key][stat] for row in per_subject
                    if key in row["tissues"]]
            spread[key][stat] = float(np.std(vals))

    report = {
        "method": method,
        "n_subjects": len(subjects),
        "per_subject": per_subject,
        "spread": spread,
        "mean_mae": float(np.mean([row["mae"] for row in per_subject])),
        "mean_rmse": float(np.mean([row["rmse"] for row in per_subject])),
    }
    if include_transforms and transforms:
        report["transforms"] = transforms
    return report


def _transform_record(to_std, result) -> dict:
    pre = result.affine.compose(to_std)
    return {
        "standardize": {"scale": to_std.scale, "offset": to_std.offset},
        "affine": {"scale": result.affine.scale, "offset": result.affine.offset},
        "composed_affine": {"scale": pre.scale, "offset": pre.offset},
        "table": {"mesh": [float(v) for v in result.table.mesh],
                  "mapped": [float(v) for v in result.table.mapped]},
    }
