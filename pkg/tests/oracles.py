"""Independent reference computations used by the tests.

Nothing here calls the filtering or Laplace code under test: the dense
joint-Gaussian likelihood, finite differences and Gauss-Hermite quadrature
are computed from first principles.
"""

import numpy as np
from scipy.special import gammaln, ndtr, log_ndtr
from scipy.optimize import minimize

from transition_calib.kalman import LinearGaussianSSM
from transition_calib.models import ResponseFamily


def dense_loglik(ssm):
    """Log-density of ``y_{1:n}`` from the dense joint Gaussian.

    O((np)^3); intended as an independent check of :func:`kalman_filter`.
    """
    n, p, s = ssm.n, ssm.p, ssm.s
    mean_x = np.empty((n, s))
    cov_x = np.empty((n, n, s, s))
    # state covariances Cov(x_j, x_k) from the transition products
    m = ssm.a0
    P = ssm.P0
    marg = []
    for k in range(n):
        m = ssm.A[k] @ m
        P = ssm.A[k] @ P @ ssm.A[k].T + ssm.Q[k]
        mean_x[k] = m
        marg.append(P)
    for j in range(n):
        cov_x[j, j] = marg[j]
        Phi = np.eye(s)
        for k in range(j + 1, n):
            Phi = ssm.A[k] @ Phi
            cov_x[k, j] = Phi @ marg[j]
            cov_x[j, k] = cov_x[k, j].T
    obs = ssm.mask.astype(bool).reshape(-1)
    mu = (ssm.c + np.einsum("kps,ks->kp", ssm.Z, mean_x)).reshape(-1)
    C = np.zeros((n * p, n * p))
    for j in range(n):
        for k in range(n):
            block = ssm.Z[j] @ cov_x[j, k] @ ssm.Z[k].T
            if j == k:
                block = block + ssm.H[k]
            C[j * p:(j + 1) * p, k * p:(k + 1) * p] = block
    y = ssm.y.reshape(-1)[obs]
    mu = mu[obs]
    C = C[np.ix_(obs, obs)]
    sign, logdet = np.linalg.slogdet(C)
    r = y - mu
    return float(-0.5 * (r.size * np.log(2 * np.pi) + logdet + r @ np.linalg.solve(C, r)))


def random_ssm(rng, n, s, p, masked=False):
    """Random stable linear-Gaussian model with time-varying pieces."""
    A = rng.uniform(-0.6, 0.6, size=(n, s, s)) / max(s, 1)
    B = rng.normal(size=(n, s, s))
    Q = B @ B.transpose(0, 2, 1) / s + 0.1 * np.eye(s)
    C = rng.normal(size=(n, p, p))
    H = C @ C.transpose(0, 2, 1) / p + 0.2 * np.eye(p)
    P = rng.normal(size=(s, s))
    mask = rng.random((n, p)) > 0.3 if masked else None
    return LinearGaussianSSM(y=rng.normal(size=(n, p)), Z=rng.normal(size=(n, p, s)), H=H,
                             A=A, Q=Q, a0=rng.normal(size=s), P0=P @ P.T + 0.1 * np.eye(s),
                             c=rng.normal(size=(n, p)), mask=mask)


def central_diff(f, x, h=1e-5):
    """Central-difference derivative of a vector function of a vector."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(f(x))
    out = np.empty(f0.shape + x.shape)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        out[(Ellipsis,) + idx] = (np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h)
    return out


def rel_err(approx, exact):
    approx, exact = np.asarray(approx), np.asarray(exact)
    return float(np.max(np.abs(approx - exact)) / max(np.max(np.abs(exact)), 1.0))


def multinomial_pmf_log(m, T):
    """Log multinomial pmf from factorial ratios (exact integers)."""
    from math import factorial, log

    N = int(sum(m))
    coef = factorial(N)
    for c in m:
        coef //= factorial(int(c))
    val = log(coef)
    for c, t in zip(m, T):
        if c:
            val += c * log(t)
    return val


def default_only_log_joint(x, d, k, m, N, a, q):
    """log p(M, x) for the one-factor default-only model with scalar AR(1).

    ``x`` has shape (..., n); ``m``/``N`` have shape (n, rows).
    """
    theta = d[None, :] + k * x[..., :, None]
    ll = (m * log_ndtr(theta) + (N - m) * log_ndtr(-theta)).sum(axis=(-1, -2))
    ll = ll + (gammaln(N + 1) - gammaln(m + 1) - gammaln(N - m + 1)).sum()
    var0 = q / (1.0 - a * a)
    lp = -0.5 * x[..., 0] ** 2 / var0 - 0.5 * np.log(2 * np.pi * var0)
    r = x[..., 1:] - a * x[..., :-1]
    lp = lp + (-0.5 * r * r / q - 0.5 * np.log(2 * np.pi * q)).sum(axis=-1)
    return ll + lp


def gauss_hermite_default_only(d, k, m, N, a, q, nodes=64):
    """``log p(M)`` by tensor Gauss-Hermite quadrature centred at the joint mode.

    The integrand is rescaled by the curvature at the mode so the nodes
    cover the posterior mass; with 64 nodes per dimension the quadrature
    error is far below the Laplace error being checked.
    """
    n = m.shape[0]
    f = lambda x: -default_only_log_joint(np.asarray(x), d, k, m, N, a, q)
    res = minimize(f, np.zeros(n), method="BFGS", options={"gtol": 1e-10})
    mode = res.x
    Hs = central_diff(lambda x: central_diff(f, x, 1e-4), mode, 1e-4)
    Hs = 0.5 * (Hs + Hs.T)
    C = np.linalg.cholesky(np.linalg.inv(Hs))
    z, w = np.polynomial.hermite.hermgauss(nodes)
    grids = np.meshgrid(*([z] * n), indexing="ij")
    Z = np.stack([g.reshape(-1) for g in grids], axis=1)
    W = np.prod(np.stack(np.meshgrid(*([w] * n), indexing="ij"), axis=0).reshape(n, -1),
                axis=0)
    X = mode + np.sqrt(2.0) * Z @ C.T
    logf = default_only_log_joint(X, d, k, m, N, a, q) + (Z * Z).sum(axis=1)
    top = logf.max()
    return float(top + np.log(np.sum(W * np.exp(logf - top)))
                 + np.log(np.abs(np.linalg.det(np.sqrt(2.0) * C))))


class GaussianFamily(ResponseFamily):
    """Test double: y_k ~ N(theta_k, sigma^2 I) with theta_k = d + K x_k.

    The Laplace approximation is exact for this family, so its likelihood
    must equal the Kalman likelihood of the linear-Gaussian model.
    """

    name = "gaussian_test"
    diagonal_hessian = True

    def __init__(self, sigma=0.5):
        self.sigma = sigma

    def check_params(self, psi, R):
        pass

    def n_signals(self, R):
        return R

    def linear_signal(self, psi, n, u=None):
        d = np.atleast_1d(psi.d)
        return np.broadcast_to(d, (n, d.size)).copy(), np.atleast_2d(psi.K)

    def prepare(self, series):
        return series

    def value_grad_hess(self, theta, data):
        r = data.y - theta
        s2 = self.sigma ** 2
        val = (-0.5 * r * r / s2 - 0.5 * np.log(2 * np.pi * s2)).sum(axis=1)
        n, p = theta.shape
        H = np.zeros((n, p, p))
        H[:, np.arange(p), np.arange(p)] = -1.0 / s2
        return val, r / s2, H

    def loglik_period(self, theta, data, k):
        r = data.y[k] - theta
        s2 = self.sigma ** 2
        return (-0.5 * r * r / s2 - 0.5 * np.log(2 * np.pi * s2)).sum(axis=-1)

    def observed_mask(self, data):
        return np.ones(data.y.shape, dtype=bool)

    def ssm(self, psi, data):
        p = data.y.shape[1]
        return LinearGaussianSSM(y=data.y, Z=np.atleast_2d(psi.K), H=self.sigma ** 2 * np.eye(p),
                                 A=psi.A, Q=psi.Q, a0=psi.a0, P0=psi.P0,
                                 c=np.broadcast_to(np.atleast_1d(psi.d), data.y.shape).copy())


class GaussianSeries:
    """Minimal series stand-in carrying continuous observations."""

    def __init__(self, y):
        self.y = np.atleast_2d(np.asarray(y, dtype=float))
        self.n, self.R = self.y.shape
