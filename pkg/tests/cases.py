"""Random model instances shared by unit and acceptance tests."""

import numpy as np
from scipy.special import ndtr

from transition_calib.domain import MigrationSeries, ModelParameters

FAMILY_NAMES = ("default_only", "performing", "two_factor", "logistic")


def random_thresholds(rng, rows, R):
    """``(R-1, R)`` level matrix: +inf, strictly decreasing ND thresholds, default level."""
    d = np.empty((rows, R))
    d[:, 0] = np.inf
    steps = rng.uniform(0.3, 1.2, size=(rows, R - 2))
    d[:, 1:R - 1] = rng.uniform(0.5, 1.5, size=(rows, 1)) - np.cumsum(steps, axis=1)
    d[:, R - 1] = rng.uniform(-2.5, -1.2, size=rows)
    return d


def random_case(family, rng, n=3, R=None, max_count=10_000):
    """``(series, psi, theta)`` with theta in the family's full layout."""
    R = int(rng.integers(3, 6)) if R is None else R
    N = rng.integers(max_count // 10, max_count + 1, size=(n, R - 1))
    if family == "default_only":
        psi = ModelParameters.unit_variance(d=rng.normal(-1.5, 0.5, R - 1), K=[0.4], A=[0.6])
        theta = rng.normal(-1.5, 0.6, size=(n, R - 1))
        m = rng.binomial(N, ndtr(theta))
        counts = np.zeros((n, R - 1, R), dtype=np.int64)
        idx = np.arange(R - 1)
        counts[:, idx, idx] = N - m
        counts[:, :, -1] = m
    elif family in ("performing", "two_factor"):
        d = random_thresholds(rng, R - 1, R)
        if family == "performing":
            psi = ModelParameters.unit_variance(d=d, K=[0.3], A=[0.7])
            theta = rng.normal(0.0, 0.5, size=(n, 1))
        else:
            psi = ModelParameters.unit_variance(d=d, K=[0.3, 0.2], A=[0.7, 0.8], rho=0.4)
            theta = rng.normal(0.0, 0.5, size=(n, 2))
        from transition_calib.models import TWO_FACTOR

        th2 = theta if family == "two_factor" else np.column_stack([np.zeros(n), theta[:, 0]])
        T = np.stack([TWO_FACTOR.probs(th2[k], d) for k in range(n)])
        counts = rng.multinomial(N, T / T.sum(axis=-1, keepdims=True))
    else:
        K = rng.normal(0.0, 0.3, size=(R - 1, R, 1))
        psi = ModelParameters.unit_variance(d=rng.normal(size=(R - 1, R)), K=K, A=[0.5])
        theta = rng.normal(0.0, 1.0, size=(n, R - 1, R))
        z = np.exp(theta - theta.max(axis=-1, keepdims=True))
        counts = rng.multinomial(N, z / z.sum(axis=-1, keepdims=True))
    return MigrationSeries(counts), psi, theta
