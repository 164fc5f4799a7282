import numpy as np
import pytest
from scipy.integrate import quad

from ndflow.dpgmm import GaussianMixture
from ndflow.errors import InvalidInputError
from ndflow.l2match import (MatchResult, OptimConfig, gaussian_inner_product,
                            l2_divergence, l2_gradients, load_match,
                            match_mixtures, save_match)
from conftest import random_mixture


def quad_divergence(q, p):
    """Adaptive-quadrature oracle for 0.5 * integral (q - p)^2."""
    sd_q = 1.0 / np.sqrt(np.min(q.precisions))
    sd_p = 1.0 / np.sqrt(np.min(p.precisions))
    lo = min(q.means.min() - 12 * sd_q, p.means.min() - 12 * sd_p)
    hi = max(q.means.max() + 12 * sd_q, p.means.max() + 12 * sd_p)
    val, _ = quad(lambda x: (q.pdf(x) - p.pdf(x)) ** 2, lo, hi,
                  limit=400, epsabs=1e-13, epsrel=1e-13)
    return 0.5 * val


def fd_gradients(q, p, step=1e-5):
    """Central finite differences of the divergence w.r.t. means/precisions."""
    dmu = np.zeros(len(q))
    dlam = np.zeros(len(q))
    for k in range(len(q)):
        for arr, out in ((q.means, dmu), (q.precisions, dlam)):
            is_mean = arr is q.means
            base = arr[k]

            def at(v):
                mu = q.means.copy()
                lam = q.precisions.copy()
                (mu if is_mean else lam)[k] = v
                return l2_divergence(GaussianMixture(q.weights, mu, lam), p)

            out[k] = (at(base + step) - at(base - step)) / (2 * step)
    return dmu, dlam


class TestInnerProduct:
    def test_standard_normals(self):
        # quadrature oracle of integral N(x;0,1)^2 dx = 1 / (2 sqrt(pi))
        got = gaussian_inner_product(0.0, 1.0, 0.0, 1.0)
        assert got == pytest.approx(0.28209479177387814, abs=1e-15)
        oracle, _ = quad(lambda x: np.exp(-x * x) / (2 * np.pi), -12, 12)
        assert got == pytest.approx(oracle, abs=1e-12)

    def test_widely_separated_positive(self):
        # |mean difference| = 20 shared standard deviations
        sd = np.sqrt(2.0)
        got = gaussian_inner_product(0.0, 1.0, 20.0 * sd, 1.0)
        assert 0.0 < got < 1e-80

    def test_symmetric_in_arguments(self, rng):
        for _ in range(25):
            a = (rng.uniform(-3, 3), rng.uniform(0.1, 10))
            b = (rng.uniform(-3, 3), rng.uniform(0.1, 10))
            assert gaussian_inner_product(*a, *b) == gaussian_inner_product(*b, *a)

    def test_rejects_bad_precision(self):
        with pytest.raises(InvalidInputError):
            gaussian_inner_product(0.0, 0.0, 0.0, 1.0)


class TestDivergence:
    def test_self_divergence_zero(self, rng):
        for _ in range(20):
            q = random_mixture(rng)
            assert abs(l2_divergence(q, q)) < 1e-12

    def test_symmetric(self, rng):
        for _ in range(20):
            q, p = random_mixture(rng), random_mixture(rng)
            assert abs(l2_divergence(q, p) - l2_divergence(p, q)) < 1e-12

    def test_against_quadrature(self):
        q = GaussianMixture([1.0], [0.0], [1.0])
        p = GaussianMixture([1.0], [1.0], [1.0])
        assert l2_divergence(q, p) == pytest.approx(quad_divergence(q, p), abs=1e-10)

    def test_nonnegative(self, rng):
        for _ in range(50):
            q, p = random_mixture(rng), random_mixture(rng)
            assert l2_divergence(q, p) >= 0.0


class TestGradients:
    def test_zero_at_identical(self, rng):
        q = random_mixture(rng, kmax=4)
        dmu, dlam = l2_gradients(q, q)
        assert np.max(np.abs(dmu)) < 1e-10
        assert np.max(np.abs(dlam)) < 1e-10

    def test_finite_difference_oracle(self, rng):
        for _ in range(10):
            q = random_mixture(rng, kmax=3)
            p = random_mixture(rng, kmax=4)
            amu, alam = l2_gradients(q, p)
            fmu, flam = fd_gradients(q, p)
            a = np.concatenate([amu, alam])
            f = np.concatenate([fmu, flam])
            assert np.max(np.abs(a - f)) < 1e-5 * max(np.max(np.abs(f)), 1e-8)

    def test_mean_gradient_pulls_towards_target(self):
        q = GaussianMixture([1.0], [0.0], [1.0])
        p = GaussianMixture([1.0], [1.0], [1.0])
        dmu, _ = l2_gradients(q, p)
        assert dmu[0] < 0  # descending moves the mean towards +1
        fmu, _ = fd_gradients(q, p)
        assert dmu[0] == pytest.approx(fmu[0], rel=1e-6)


class TestMatch:
    def test_identical_input_is_fixed_point(self, rng):
        q = random_mixture(rng, kmax=4)
        res = match_mixtures(q, q)
        assert len(res.divergence_trace) == 1  # zero accepted iterations
        assert np.array_equal(res.optimized_means, q.means)
        assert np.array_equal(res.optimized_precisions, q.precisions)

    def test_pure_shift_recovered(self):
        w = np.array([0.3, 0.5, 0.2])
        mu = np.array([-1.0, 0.5, 2.0])
        lam = np.array([2.0, 1.0, 4.0])
        q = GaussianMixture(w, mu, lam)
        p = GaussianMixture(w, mu + 0.7, lam)
        res = match_mixtures(q, p)
        assert np.max(np.abs(res.optimized_means - (mu + 0.7))) < 1e-4
        assert res.divergence_trace[-1] < 1e-8

    def test_single_component_target_recovered(self):
        q = GaussianMixture([1.0], [0.0], [1.0])
        p = GaussianMixture([1.0], [2.0], [4.0])
        res = match_mixtures(q, p)
        assert res.optimized_means[0] == pytest.approx(2.0, abs=1e-4)
        assert res.optimized_precisions[0] == pytest.approx(4.0, abs=1e-3)

    def test_trace_strictly_decreasing(self, rng):
        q = random_mixture(rng, kmax=4)
        p = random_mixture(rng, kmax=4)
        res = match_mixtures(q, p)
        assert np.all(np.diff(res.divergence_trace) < 0)

    def test_precisions_positive_and_weights_untouched(self, rng):
        for _ in range(10):
            q = random_mixture(rng, kmax=5)
            p = random_mixture(rng, kmax=5)
            res = match_mixtures(q, p)
            assert np.all(res.optimized_precisions > 0)
            assert np.array_equal(res.initial.weights, q.weights)

    def test_result_json_roundtrip(self, tmp_path, rng):
        q = random_mixture(rng, kmax=3)
        p = random_mixture(rng, kmax=3)
        res = match_mixtures(q, p)
        path = tmp_path / "match.json"
        save_match(res, path)
        back = load_match(path)
        assert np.array_equal(back.optimized_means, res.optimized_means)
        assert np.array_equal(back.optimized_precisions, res.optimized_precisions)
        assert np.array_equal(back.divergence_trace, res.divergence_trace)
        assert np.array_equal(back.initial.weights, q.weights)

    def test_increasing_trace_rejected_by_type(self):
        q = GaussianMixture([1.0], [0.0], [1.0])
        with pytest.raises(InvalidInputError):
            MatchResult(q, [0.0], [1.0], [0.1, 0.2])

    def test_optim_config_validation(self):
        with pytest.raises(InvalidInputError):
            OptimConfig(backtracking_factor=1.0)
        with pytest.raises(InvalidInputError):
            OptimConfig(initial_step=0.0)
