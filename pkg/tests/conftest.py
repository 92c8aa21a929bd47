import numpy as np
import pytest

from rankbias.datagen import Dataset


def make_dataset(X, w, y, p=0.5, mu=None, tau=None) -> Dataset:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    return Dataset(X, np.asarray(w, dtype=np.int8), np.asarray(y, dtype=np.int8), p, mu, tau)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
