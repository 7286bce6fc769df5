"""Particle-filter estimates of the likelihood ``p(M_{1:n} | psi)``.

Two filters share the same skeleton (propagate, weight, resample):

* :func:`bootstrap_pf` proposes from the latent AR(1) transition and weights
  by ``p(M_k | x_k)``;
* :func:`pf_importance` proposes from the filtered posteriors of the
  auxiliary linear-Gaussian model built at the signal mode, and weights by
  ``p(M_k | x) p(x | x_{k-1}) / q_k(x)``.

Both return the sum of log conditional-likelihood estimates, each the
log-mean of the unnormalized weights of its period.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import WeightCollapseError
from .kalman import kalman_filter, psd_sqrt
from .laplace import _mode, _Problem

LOG2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class ParticleCloud:
    """Particles ``(N, s)`` with normalized weights at period ``k``."""

    particles: np.ndarray
    weights: np.ndarray
    k: int


@dataclass(frozen=True, eq=False)
class PFLikelihood:
    """Particle estimate of the log-likelihood.

    ``per_period`` holds the log conditional-likelihood estimates, ``ess``
    the effective sample size before resampling, and ``fallback_periods``
    the periods where the importance filter used the transition proposal.
    """

    loglik: float
    per_period: np.ndarray
    ess: np.ndarray
    n_particles: int
    method: str
    fallback_periods: list = field(default_factory=list)
    cloud: ParticleCloud = None
    mode: object = None


def resample(w, rng, method="multinomial"):
    """Ancestor indices for normalized weights ``w``."""
    N = w.size
    c = np.cumsum(w)
    c[-1] = 1.0
    if method == "multinomial":
        # sorted queries make the binary searches cache-friendly; the
        # ancestor multiset has the same law as with unsorted draws
        u = np.sort(rng.random(N))
    elif method == "systematic":
        u = (rng.random() + np.arange(N)) / N
    else:
        raise ValueError(f"unknown resampling method {method!r}")
    return np.minimum(np.searchsorted(c, u, side="right"), N - 1)


def _normalize(logw, k):
    top = np.max(logw)
    if not np.isfinite(top):
        raise WeightCollapseError(f"all particle weights vanished at period {k}", period=k)
    w = np.exp(logw - top)
    total = w.sum()
    cond = top + np.log(total) - np.log(logw.size)
    w /= total
    return cond, w, 1.0 / np.sum(w * w)


def _filtered_factors(P):
    """Lower Cholesky factors of a stack of covariances; ``None`` where singular."""
    try:
        L = np.linalg.cholesky(P)
        ok = np.ones(P.shape[0], dtype=bool)
    except np.linalg.LinAlgError:
        L = np.zeros_like(P)
        ok = np.zeros(P.shape[0], dtype=bool)
        for k, Pk in enumerate(P):
            try:
                L[k] = np.linalg.cholesky(Pk)
                ok[k] = True
            except np.linalg.LinAlgError:
                pass
    d = np.diagonal(L, axis1=1, axis2=2)
    ok &= np.all(np.isfinite(d), axis=1)
    ok &= np.min(d, axis=1) > 1e-10 * np.maximum(1.0, np.max(d, axis=1))
    return [L[k] if ok[k] else None for k in range(P.shape[0])]


class _Gauss:
    """Log-density of ``N(0, L L')`` for rows of a sample matrix."""

    def __init__(self, L):
        self.Linv_T = np.linalg.inv(L).T
        self.const = -np.log(np.diag(L)).sum() - 0.5 * L.shape[0] * LOG2PI

    def __call__(self, z):
        w = z @ self.Linv_T
        return -0.5 * np.einsum("ij,ij->i", w, w) + self.const


def bootstrap_pf(family, series, psi, u=None, N=1000, rng=None, resampling="multinomial",
                 data=None):
    """Bootstrap (sampling-importance-resampling) particle filter.

    Raises
    ------
    WeightCollapseError
        If every particle weight is zero in some period.
    """
    if N < 1:
        raise ValueError("need at least one particle")
    rng = np.random.default_rng(rng)
    prob = _Problem(family, series, psi, u, data)
    fam, data = prob.family, prob.data
    s = psi.s
    A = psi.A
    Lq = np.linalg.cholesky(psi.Q)
    x = psi.a0 + rng.standard_normal((N, s)) @ psd_sqrt(psi.P0).T
    n = prob.n
    per = np.empty(n)
    ess = np.empty(n)
    w = np.full(N, 1.0 / N)
    for k in range(n):
        x = x @ A.T + rng.standard_normal((N, s)) @ Lq.T
        logw = fam.particle_loglik(x, k, prob.offset, prob.Z, data)
        per[k], w, ess[k] = _normalize(logw, k)
        x = x[resample(w, rng, resampling)]
    return PFLikelihood(loglik=float(per.sum()), per_period=per, ess=ess, n_particles=N,
                        method="bootstrap", cloud=ParticleCloud(x, np.full(N, 1.0 / N), n - 1))


def pf_importance(family, series, psi, u=None, N=1000, rng=None, tol=1e-8,
                  resampling="multinomial", data=None, mode=None, x_init=None):
    """Particle filter with importance densities from the auxiliary model.

    The proposal at period ``k`` is the Kalman filtered posterior
    ``N(m_k, P_k)`` of the auxiliary linear-Gaussian model at the signal
    mode; it does not depend on the particle's ancestor.  Periods whose
    filtered covariance cannot be factorized fall back to the transition
    proposal and are listed in ``fallback_periods``.  ``x_init`` seeds the
    mode search (a nearby mode converges in fewer Newton steps).
    """
    if N < 1:
        raise ValueError("need at least one particle")
    rng = np.random.default_rng(rng)
    prob = _Problem(family, series, psi, u, data)
    fam, data = prob.family, prob.data
    if mode is None:
        mode = _mode(prob, tol, 100, 1e-6, x_init, True)
    ssm, _, _, _ = prob.aux_model(mode.theta_mode, mode.grad, mode.hess)
    filt = kalman_filter(ssm)
    factors = _filtered_factors(filt.P_filt)
    s = psi.s
    A = psi.A
    Lq = np.linalg.cholesky(psi.Q)
    P1 = A @ psi.P0 @ A.T + psi.Q
    L1 = np.linalg.cholesky(0.5 * (P1 + P1.T))
    trans_first, trans = _Gauss(L1), _Gauss(Lq)
    m1 = A @ psi.a0
    n = prob.n
    per = np.empty(n)
    ess = np.empty(n)
    fallback = []
    x = None
    for k in range(n):
        Lk = factors[k]
        if Lk is None:
            fallback.append(k)
            if k == 0:
                xn = m1 + rng.standard_normal((N, s)) @ L1.T
            else:
                xn = x @ A.T + rng.standard_normal((N, s)) @ Lq.T
            logw = fam.particle_loglik(xn, k, prob.offset, prob.Z, data)
        else:
            z = rng.standard_normal((N, s))
            xn = filt.x_filt[k] + z @ Lk.T
            log_trans = trans_first(xn - m1) if k == 0 else trans(xn - x @ A.T)
            log_q = -0.5 * np.einsum("ij,ij->i", z, z) - np.log(np.diag(Lk)).sum() \
                - 0.5 * s * LOG2PI
            logw = fam.particle_loglik(xn, k, prob.offset, prob.Z, data) + log_trans - log_q
        per[k], w, ess[k] = _normalize(logw, k)
        x = xn[resample(w, rng, resampling)]
    return PFLikelihood(loglik=float(per.sum()), per_period=per, ess=ess, n_particles=N,
                        method="importance", fallback_periods=fallback,
                        cloud=ParticleCloud(x, np.full(N, 1.0 / N), n - 1), mode=mode)

