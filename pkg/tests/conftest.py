import numpy as np
import pytest

from wbusemann.measures import GaussianMeasure, GaussianMixture, LabeledDataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spd(rng, d, floor=0.1):
    a = rng.standard_normal((d, d))
    return a @ a.T / d + floor * np.eye(d)


def random_gaussian(rng, d):
    return GaussianMeasure(rng.standard_normal(d), random_spd(rng, d))


def random_mixture(rng, K, d):
    w = rng.dirichlet(np.ones(K))
    return GaussianMixture.from_arrays(w, 2.0 * rng.standard_normal((K, d)), [random_spd(rng, d) for _ in range(K)])


def random_dataset(rng, n, d, C, shift=0.0):
    y = np.concatenate([np.arange(1, C + 1), rng.integers(1, C + 1, n - C)])
    x = rng.standard_normal((n, d)) + shift + 0.5 * y[:, None]
    return LabeledDataset(x, y)
