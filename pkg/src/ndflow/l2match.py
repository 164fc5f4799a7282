"""Closed-form L2 divergence between Gaussian mixtures and its minimisation.

The squared-distance objective ``0.5 * integral (q - p)^2`` has a closed
form for Gaussian mixtures because every pairwise product of components
integrates to a Gaussian density evaluated at the difference of means.  Its
gradients with respect to the source means and precisions are analytic as
well, which allows plain gradient descent with a backtracking line search.
Mixture weights are never optimised: moving mass between components would
change what each component represents.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .dpgmm import GaussianMixture
from .errors import InvalidInputError, NumericalError

_ARMIJO_C = 1e-4
_MIN_STEP = 1e-18


def gaussian_inner_product(mu1: float, lam1: float, mu2: float, lam2: float) -> float:
    """L2 inner product of two Gaussian densities.

    Equals the Gaussian density with variance ``1/lam1 + 1/lam2`` evaluated
    at ``mu1 - mu2``; symmetric and strictly positive.
    """
    if not (lam1 > 0 and lam2 > 0):
        raise InvalidInputError(f"precisions must be positive, got {lam1} and {lam2}")
    var = 1.0 / lam1 + 1.0 / lam2
    return float(np.exp(-0.5 * (mu1 - mu2) ** 2 / var) / np.sqrt(2.0 * np.pi * var))


def _gram(mu_a, lam_a, mu_b, lam_b) -> np.ndarray:
    """Matrix of pairwise Gaussian inner products, shape (len(a), len(b))."""
    var = 1.0 / lam_a[:, None] + 1.0 / lam_b[None, :]
    diff = mu_a[:, None] - mu_b[None, :]
    return np.exp(-0.5 * diff * diff / var) / np.sqrt(2.0 * np.pi * var)


def _divergence_arrays(pi, mu, lam, tau, nu, omega) -> float:
    qq = pi @ _gram(mu, lam, mu, lam) @ pi
    pp = tau @ _gram(nu, omega, nu, omega) @ tau
    pq = tau @ _gram(nu, omega, mu, lam) @ pi
    return float(0.5 * qq + 0.5 * pp - pq)


def l2_divergence(q: GaussianMixture, p: GaussianMixture) -> float:
    """Half the squared L2 distance between two mixture densities.

    Symmetric, zero iff the densities agree almost everywhere; tiny negative
    rounding residue is clamped to 0.
    """
    d = _divergence_arrays(q.weights, q.means, q.precisions,
                           p.weights, p.means, p.precisions)
    return max(d, 0.0) if d > -1e-12 else d


def l2_gradients(q: GaussianMixture, p: GaussianMixture):
    """Derivatives of the divergence w.r.t. the source means and precisions.

    Returns ``(d_means, d_precisions)``, each of length ``len(q)``.
    """
    return _gradients_arrays(q.weights, q.means, q.precisions,
                             p.weights, p.means, p.precisions)


def _gradients_arrays(pi, mu, lam, tau, nu, omega):
    gqq = _gram(mu, lam, mu, lam)              # (K, K)
    gpq = _gram(nu, omega, mu, lam)            # (M, K)
    w = pi[:, None] * pi[None, :] * gqq        # w[l, k]
    v = tau[:, None] * pi[None, :] * gpq       # v[m, k]

    inv_var_qq = 1.0 / (1.0 / lam[:, None] + 1.0 / lam[None, :])
    inv_var_pq = 1.0 / (1.0 / omega[:, None] + 1.0 / lam[None, :])
    dmu = ((w * (mu[:, None] - mu[None, :]) * inv_var_qq).sum(axis=0)
           - (v * (nu[:, None] - mu[None, :]) * inv_var_pq).sum(axis=0))

    sum_qq = lam[:, None] + lam[None, :]
    sum_pq = omega[:, None] + lam[None, :]
    bracket_qq = (1.0 / lam[None, :] - 1.0 / sum_qq
                  - (lam[:, None] * (mu[:, None] - mu[None, :]) / sum_qq) ** 2)
    bracket_pq = (1.0 / lam[None, :] - 1.0 / sum_pq
                  - (omega[:, None] * (nu[:, None] - mu[None, :]) / sum_pq) ** 2)
    dlam = 0.5 * ((w * bracket_qq).sum(axis=0) - (v * bracket_pq).sum(axis=0))
    return dmu, dlam


@dataclass(frozen=True)
class OptimConfig:
    """Gradient-descent settings for :func:`match_mixtures`."""

    max_iterations: int = 2000
    grad_norm_tolerance: float = 1e-7
    initial_step: float = 0.1
    backtracking_factor: float = 0.5

    def __post_init__(self):
        if self.max_iterations < 1:
            raise InvalidInputError("max_iterations must be >= 1")
        if not (self.grad_norm_tolerance > 0 and self.initial_step > 0):
            raise InvalidInputError("tolerances and steps must be positive")
        if not (0 < self.backtracking_factor < 1):
            raise InvalidInputError("backtracking_factor must lie in (0, 1)")


@dataclass(frozen=True)
class MatchResult:
    """Outcome of matching a source mixture towards a target."""

    initial: GaussianMixture
    optimized_means: np.ndarray
    optimized_precisions: np.ndarray
    divergence_trace: np.ndarray = field(repr=False)

    def __post_init__(self):
        mu = np.asarray(self.optimized_means, dtype=float)
        lam = np.asarray(self.optimized_precisions, dtype=float)
        trace = np.asarray(self.divergence_trace, dtype=float)
        if mu.size != len(self.initial) or lam.size != len(self.initial):
            raise InvalidInputError("optimised parameter count must match the initial mixture")
        if np.any(lam <= 0):
            raise InvalidInputError("optimised precisions must be positive")
        if trace.size and np.any(np.diff(trace) > 0):
            raise InvalidInputError("divergence trace must be non-increasing")
        for arr in (mu, lam, trace):
            arr.setflags(write=False)
        object.__setattr__(self, "optimized_means", mu)
        object.__setattr__(self, "optimized_precisions", lam)
        object.__setattr__(self, "divergence_trace", trace)

    def optimized_mixture(self) -> GaussianMixture:
        """Matched mixture: original weights with optimised means/precisions."""
        return GaussianMixture(self.initial.weights, self.optimized_means,
                               self.optimized_precisions)

    def to_dict(self) -> dict:
        return {
            "means": [float(v) for v in self.optimized_means],
            "precisions": [float(v) for v in self.optimized_precisions],
            "trace": [float(v) for v in self.divergence_trace],
            "initial": self.initial.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MatchResult":
        try:
            return cls(GaussianMixture.from_dict(d["initial"]),
                       np.asarray(d["means"], dtype=float),
                       np.asarray(d["precisions"], dtype=float),
                       np.asarray(d["trace"], dtype=float))
        except (KeyError, TypeError) as exc:
            raise InvalidInputError(f"malformed match result: {exc}") from exc


def save_match(result: MatchResult, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(result.to_dict(), fh, sort_keys=True)
        fh.write("\n")


def load_match(path) -> MatchResult:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"{path}: not valid JSON: {exc}") from exc
    return MatchResult.from_dict(d)


def match_mixtures(q: GaussianMixture, p: GaussianMixture,
                   cfg: OptimConfig | None = None) -> MatchResult:
    """Minimise the L2 divergence of ``q`` towards ``p``.

    Only means and precisions of ``q`` move; its weights are untouched.
    Optimisation runs in ``(mu, l)`` coordinates with ``lambda = l**2`` so
    precisions stay positive structurally.  Steps are accepted under the
    Armijo condition, which makes the divergence trace strictly decreasing;
    the search stops when the gradient's infinity norm falls below the
    tolerance, the line search stalls, or the iteration budget is spent.
    """
    if cfg is None:
        cfg = OptimConfig()
    pi = q.weights
    tau, nu, omega = p.weights, p.means, p.precisions
    mu = q.means.copy()
    ell = np.sqrt(q.precisions)

    def divergence(mu_v, ell_v):
        return _divergence_arrays(pi, mu_v, ell_v ** 2, tau, nu, omega)

    d_current = divergence(mu, ell)
    if not np.isfinite(d_current):
        raise NumericalError("non-finite divergence at the starting point", trace=[])
    trace = [d_current]

    # The trial step warms up from the previously accepted one, so the line
    # search adapts to the local curvature instead of crawling at a fixed
    # fraction of the gradient.
    trial_step = cfg.initial_step
    for _ in range(cfg.max_iterations):
        dmu, dlam = _gradients_arrays(pi, mu, ell ** 2, tau, nu, omega)
        dell = 2.0 * ell * dlam
        if not (np.all(np.isfinite(dmu)) and np.all(np.isfinite(dell))):
            raise NumericalError("non-finite gradient during matching", trace=trace)
        grad_norm = max(np.max(np.abs(dmu)), np.max(np.abs(dell)))
        if grad_norm < cfg.grad_norm_tolerance:
            break
        grad_sq = float(dmu @ dmu + dell @ dell)

        step = trial_step
        accepted = False
        while step > _MIN_STEP:
            mu_new = mu - step * dmu
            ell_new = ell - step * dell
            lam_new = ell_new ** 2
            if np.all(lam_new > 0):
                d_new = divergence(mu_new, ell_new)
                if np.isfinite(d_new) and d_new <= d_current - _ARMIJO_C * step * grad_sq:
                    accepted = True
                    break
            step *= cfg.backtracking_factor
        if not accepted:
            break
        mu, ell, d_current = mu_new, ell_new, d_new
        trace.append(d_current)
        trial_step = min(step / cfg.backtracking_factor, 1e8)

    return MatchResult(q, mu, ell ** 2, np.asarray(trace))
