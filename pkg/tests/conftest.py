import numpy as np
import pytest

from gpcopula.lowrank import LowRankGaussian


def random_gaussian(rng, n, r, d_low=0.2):
    return LowRankGaussian(rng.normal(size=n), rng.uniform(d_low, 2.0, n), rng.normal(size=(n, r)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
