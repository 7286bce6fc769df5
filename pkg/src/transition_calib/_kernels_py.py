"""Pure numpy fallback for the compiled kernels in ``_kernels.pyx``.

Same signatures, same arithmetic.  Used when the extension is not built or
when ``TRANSITION_CALIB_BACKEND=python`` is set.
"""

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import log_ndtr, ndtr

from .errors import ConditioningError

LOG2PI = np.log(2.0 * np.pi)
LOG_SQRT_2PI = 0.5 * LOG2PI


def kalman_filter_core(y, c, Z, H, mask, A, Q, a0, P0):
    n, p = y.shape
    s = a0.shape[0]
    x_pred = np.empty((n, s))
    P_pred = np.empty((n, s, s))
    x_filt = np.empty((n, s))
    P_filt = np.empty((n, s, s))
    ll = np.zeros(n)

    xf = np.array(a0, dtype=float)
    Pf = np.array(P0, dtype=float)
    for k in range(n):
        xp = A[k] @ xf
        Pp = A[k] @ Pf @ A[k].T + Q[k]
        Pp = 0.5 * (Pp + Pp.T)
        x_pred[k] = xp
        P_pred[k] = Pp

        idx = np.flatnonzero(mask[k])
        if idx.size == 0:
            xf, Pf = xp, Pp
        else:
            Zk = Z[k][idx]
            v = y[k, idx] - c[k, idx] - Zk @ xp
            F = Zk @ Pp
            S = F @ Zk.T + H[k][np.ix_(idx, idx)]
            S = 0.5 * (S + S.T)
            try:
                L = np.linalg.cholesky(S)
            except np.linalg.LinAlgError:
                raise ConditioningError(
                    f"innovation covariance not positive definite at period {k}",
                    period=k) from None
            w = _chol_solve(L, v)
            SF = _chol_solve(L, F)
            xf = xp + F.T @ w
            Pf = Pp - F.T @ SF
            Pf = 0.5 * (Pf + Pf.T)
            logdet = 2.0 * np.log(np.diag(L)).sum()
            ll[k] = -0.5 * (idx.size * LOG2PI + logdet + v @ w)
        x_filt[k] = xf
        P_filt[k] = Pf
    return x_pred, P_pred, x_filt, P_filt, ll


def rts_smoother_core(A, x_pred, P_pred, x_filt, P_filt):
    n = x_filt.shape[0]
    xs = np.array(x_filt, copy=True)
    Ps = np.array(P_filt, copy=True)
    for k in range(n - 2, -1, -1):
        try:
            L = np.linalg.cholesky(P_pred[k + 1])
        except np.linalg.LinAlgError:
            raise ConditioningError(
                f"predicted covariance not positive definite at period {k + 1}",
                period=k + 1) from None
        J = _chol_solve(L, A[k + 1] @ P_filt[k]).T
        xs[k] = x_filt[k] + J @ (xs[k + 1] - x_pred[k + 1])
        P = P_filt[k] + J @ (Ps[k + 1] - P_pred[k + 1]) @ J.T
        Ps[k] = 0.5 * (P + P.T)
    return xs, Ps


def probit_binomial_particles(x, c, Z, m, nm):
    theta = c + x @ Z.T
    out = np.zeros(x.shape[0])
    for j in range(c.shape[0]):
        if m[j] > 0:
            out += m[j] * log_ndtr(theta[:, j])
        if nm[j] > 0:
            out += nm[j] * log_ndtr(-theta[:, j])
    return out


def _chol_solve(L, b):
    z = solve_triangular(L, b, lower=True)
    return solve_triangular(L.T, z, lower=False)


def log_interval(u, l):
    """log(Phi(u) - Phi(l)) for u > l, either bound possibly infinite."""
    u = np.asarray(u, dtype=float)
    l = np.asarray(l, dtype=float)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        a = log_ndtr(-l)
        right = a + np.log1p(-np.exp(log_ndtr(-u) - a))
        c = log_ndtr(u)
        left = c + np.log1p(-np.exp(log_ndtr(l) - c))
        mid = np.log1p(-(ndtr(l) + ndtr(-u)))
    return np.where(l >= 0.0, right, np.where(u <= 0.0, left, mid))


def _pdf_terms(z):
    """(phi(z), z*phi(z)) with both zero at infinite z."""
    finite = np.isfinite(z)
    zf = np.where(finite, z, 0.0)
    phi = np.where(finite, np.exp(-0.5 * zf * zf - LOG_SQRT_2PI), 0.0)
    return phi, zf * phi


def probit_binomial_terms(theta, m, nm):
    lpdf = -0.5 * theta * theta - LOG_SQRT_2PI
    lp = log_ndtr(theta)
    lq = log_ndtr(-theta)
    lam_p = np.exp(lpdf - lp)
    lam_q = np.exp(lpdf - lq)
    pos_m = m > 0
    pos_nm = nm > 0
    val = np.where(pos_m, m * lp, 0.0) + np.where(pos_nm, nm * lq, 0.0)
    g = np.where(pos_m, m * lam_p, 0.0) - np.where(pos_nm, nm * lam_q, 0.0)
    h = (-np.where(pos_m, m * lam_p * (theta + lam_p), 0.0)
         - np.where(pos_nm, nm * lam_q * (lam_q - theta), 0.0))
    return val, g, h


def ordered_probit_terms(theta, upper, lower, counts):
    t = theta[:, None, None]
    u = upper + t
    l = lower + t
    logP = log_interval(u, l)
    phi_u, uphi_u = _pdf_terms(u)
    phi_l, lphi_l = _pdf_terms(l)
    with np.errstate(over="ignore", invalid="ignore"):
        inv = np.exp(-logP)
        d1 = (phi_u - phi_l) * inv
        d2 = (-uphi_u + lphi_l) * inv
    used = counts > 0
    val = np.where(used, counts * logP, 0.0).sum(axis=(1, 2))
    g = np.where(used, counts * d1, 0.0).sum(axis=(1, 2))
    h = np.where(used, counts * (d2 - d1 * d1), 0.0).sum(axis=(1, 2))
    return val, g, h
