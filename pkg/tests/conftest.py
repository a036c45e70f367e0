import numpy as np
import pytest

from confanom.core import DataMatrix, make_rng


@pytest.fixture
def rng():
    return make_rng(123)


def gaussian_matrix(seed, n, d=4, mean=0.0):
    g = np.random.default_rng(seed)
    return DataMatrix(g.normal(loc=mean, size=(n, d)))


def labeled_batch(seed, n_inliers, n_anomalies, d=4, shift=3.0):
    """Inliers then shifted anomalies, with 0/1 labels."""
    g = np.random.default_rng(seed)
    X = np.vstack([
        g.normal(size=(n_inliers, d)),
        g.normal(loc=shift, size=(n_anomalies, d)),
    ])
    labels = np.r_[np.zeros(n_inliers, dtype=int), np.ones(n_anomalies, dtype=int)]
    return DataMatrix(X, labels=labels)
