"""Scenario generation: latent AR(1) paths, migration counts, level matching."""

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .domain import LatentPath, MigrationSeries, ModelParameters, stationary_covariance
from .models import DefaultOnlyProbit, get_family

# long-run settings used throughout the studies
HIGH_DEFAULT = {"pd": [0.01, 0.04, 0.1], "populations": [100000, 10000, 5000],
                "a": 0.7, "k": 0.3}
LOW_DEFAULT = {"pd": [0.001, 0.004, 0.01], "populations": [5000, 1000, 500],
               "a": 0.7, "k": 0.6}
TWO_FACTOR = {"pd": [0.01, 0.04, 0.1],
              "nd": [[0.85, 0.10, 0.05], [0.20, 0.60, 0.20], [0.10, 0.20, 0.70]],
              "populations": [100000, 10000, 5000],
              "a": [0.7, 0.8], "k": [0.3, 0.2], "rho": 0.4}


def simulate_latent(A, Q, n, rng, renormalize=False, a0=None, P0=None):
    """Simulate ``x_k = A x_{k-1} + eta_k`` with ``x_0`` from its stationary law.

    With ``renormalize`` the innovations are centred, whitened with their
    sample covariance and recoloured with ``Q``, so ``np.cov(eta.T)``
    equals ``Q`` up to rounding.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    s = A.shape[0]
    a0 = np.zeros(s) if a0 is None else np.asarray(a0, dtype=float).reshape(s)
    P0 = stationary_covariance(A, Q) if P0 is None else np.atleast_2d(P0)
    x0 = a0 + _sqrt_psd(P0) @ rng.standard_normal(s)
    eta = rng.standard_normal((n, s)) @ _sqrt_psd(Q).T
    if renormalize:
        if n <= s:
            raise ValueError("renormalization needs more periods than factors")
        eta = eta - eta.mean(axis=0)
        S = np.atleast_2d(np.cov(eta, rowvar=False))
        W = np.linalg.solve(np.linalg.cholesky(S), eta.T)
        eta = (np.linalg.cholesky(Q) @ W).T if np.all(np.linalg.eigvalsh(Q) > 0) \
            else (_sqrt_psd(Q) @ W).T
    x = np.empty((n, s))
    prev = x0
    for k in range(n):
        prev = A @ prev + eta[k]
        x[k] = prev
    return LatentPath(x=x, eta=eta, x0=x0)


def _sqrt_psd(M):
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    return V * np.sqrt(np.clip(w, 0.0, None))


@dataclass(frozen=True, eq=False)
class SimulatedScenario:
    series: MigrationSeries
    latent: LatentPath
    theta: np.ndarray


def simulate_migrations(family, psi, populations, n, rng, u=None, renormalize=False):
    """Draw migration counts for ``n`` periods with fixed row populations.

    For the default-only family survivors are recorded on the diagonal
    (staying in their rating); only the default column is informative.
    """
    family = get_family(family)
    pops = np.asarray(populations, dtype=np.int64)
    if np.any(pops <= 0):
        raise ValueError("populations must be positive")
    R = pops.size + 1
    family.check_params(psi, R)
    latent = simulate_latent(psi.A, psi.Q, n, rng, renormalize=renormalize,
                             a0=psi.a0, P0=psi.P0)
    theta = family.signal_path(psi, latent.x, u)
    N = np.broadcast_to(pops, (n, R - 1))
    counts = np.zeros((n, R - 1, R), dtype=np.int64)
    if isinstance(family, DefaultOnlyProbit):
        defaults = rng.binomial(N, family.probs(theta)[..., 1])
        idx = np.arange(R - 1)
        counts[:, idx, idx] = N - defaults
        counts[:, :, -1] = defaults
    else:
        T = np.stack([family.probs(theta[k], psi.d) for k in range(n)])
        T = T / T.sum(axis=-1, keepdims=True)
        counts[:] = rng.multinomial(N, T)
    return SimulatedScenario(series=MigrationSeries(counts), latent=latent, theta=theta)


def derive_d_from_average(rbar, K):
    """Levels matching long-run average probabilities.

    Uses ``E[Phi(d + K X)] = Phi(d / sqrt(1 + K^2))`` for ``X ~ N(0, 1)``,
    i.e. ``d = sqrt(1 + K^2) * Phi^{-1}(rbar)``.
    """
    rbar = np.asarray(rbar, dtype=float)
    if np.any(~((rbar > 0) & (rbar < 1))):
        raise ValueError("average rates must lie strictly inside (0, 1)")
    return np.sqrt(1.0 + np.asarray(K, dtype=float) ** 2) * ndtri(rbar)


def cumulative_nd(T_nd):
    """``C[i, j] = sum_{l >= j} T_nd[i, l]`` for the performing columns."""
    T_nd = np.asarray(T_nd, dtype=float)
    return np.cumsum(T_nd[:, ::-1], axis=1)[:, ::-1]


def two_factor_levels(pd_bar, nd_cumulative, k_d, k_p):
    """Ordered-probit levels ``(R-1, R)`` from long-run averages.

    ``nd_cumulative`` holds the cumulative no-default probabilities for the
    columns 2..R-1, shape ``(R-1, R-2)``.
    """
    pd_bar = np.asarray(pd_bar, dtype=float)
    cum = np.asarray(nd_cumulative, dtype=float)
    R = pd_bar.size + 1
    d = np.empty((R - 1, R))
    d[:, 0] = np.inf
    d[:, 1:R - 1] = derive_d_from_average(cum, k_p)
    d[:, R - 1] = derive_d_from_average(pd_bar, k_d)
    return d


def default_only_params(pd_bar, a, k, rho=None):
    pd_bar = np.asarray(pd_bar, dtype=float)
    return ModelParameters.unit_variance(d=derive_d_from_average(pd_bar, k), K=[k], A=[a])


def two_factor_params(pd_bar, T_nd, a, k, rho):
    cum = cumulative_nd(T_nd)[:, 1:]
    d = two_factor_levels(pd_bar, cum, k[0], k[1])
    return ModelParameters.unit_variance(d=d, K=list(k), A=list(a), rho=rho)


def empirical_default_rate(series):
    """Per-row mean over periods of the observed default frequency."""
    N = series.row_totals.astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        rate = series.defaults / N
    return np.nanmean(np.where(N > 0, rate, np.nan), axis=0)


def empirical_cumulative_nd(series):
    """Per-row mean over periods of cumulative no-default frequencies.

    Returns shape ``(R-1, R-2)``: the share of survivors ending in column
    ``j`` or worse, for ``j = 2..R-1``.
    """
    nd = series.counts[:, :, :-1].astype(float)
    tot = nd.sum(axis=2)
    cum = np.cumsum(nd[:, :, ::-1], axis=2)[:, :, ::-1][:, :, 1:]
    with np.errstate(invalid="ignore", divide="ignore"):
        rate = cum / tot[:, :, None]
    return np.nanmean(np.where(tot[:, :, None] > 0, rate, np.nan), axis=0)
