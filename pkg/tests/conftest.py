import numpy as np
import pytest

from ndflow.dpgmm import GaussianMixture


def random_mixture(rng, kmax=8, mean_range=(-3.0, 3.0), prec_range=(0.1, 10.0)):
    """Random mixture with up to ``kmax`` components."""
    k = int(rng.integers(1, kmax + 1))
    w = rng.dirichlet(np.ones(k))
    return GaussianMixture(w / w.sum(),
                           rng.uniform(*mean_range, k),
                           rng.uniform(*prec_range, k))


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
