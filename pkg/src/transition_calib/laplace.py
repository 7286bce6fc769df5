"""Mode estimation, Laplace-approximated likelihood and its maximization.

The signal posterior ``p(theta | M)`` is maximized by Newton-Raphson.  Each
Newton step is the smoothed mean of an auxiliary linear-Gaussian model whose
observations are the pseudo-observations ``theta - H^{-1} g`` with noise
``-H^{-1}`` (``g``, ``H``: gradient and Hessian of ``log p(M | theta)``).
At the mode, the same auxiliary model gives the Laplace approximation::

    log p(M) ~= log C + log p_aux(y)

where ``log p_aux`` is the Kalman likelihood of the auxiliary model and
``log C`` collects the Gaussian normalization terms of the second-order
expansion.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from .errors import CalibrationError, NonConvergenceError, StepRejectionError
from .kalman import LinearGaussianSSM, kalman_filter, kalman_smoother
from .models import bind, get_family

LOG2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class ModeResult:
    """Posterior mode of the signals and the latent factors behind it.

    ``theta_mode`` is in the family's state-space layout ``(n, p)``;
    ``x_mode``/``x_cov`` are the smoothed latent moments of the final
    auxiliary model.  ``grad_norm`` is the sup-norm of the gradient of the
    log posterior with respect to the latent path at the returned iterate.
    """

    theta_mode: np.ndarray
    x_mode: np.ndarray
    x_cov: np.ndarray
    iterations: int
    final_step_norm: float
    grad_norm: float
    grad: np.ndarray
    hess: np.ndarray
    family: str


@dataclass(frozen=True, eq=False)
class LaplaceLikelihood:
    """Laplace approximation of ``log p(M | psi)`` with its ingredients."""

    loglik: float
    logC: float
    aux_ssm: LinearGaussianSSM
    pseudo_obs: np.ndarray
    mode: ModeResult
    filtered: object = None


class _Problem:
    """Family, prepared data and state-space pieces for one ``(series, psi)``."""

    def __init__(self, family, series, psi, u=None, data=None):
        self.family = get_family(family)
        self.family.check_params(psi, series.R)
        self.psi = psi
        if data is None:
            data = self.family.prepare(series)
        self.data = bind(self.family, psi, data)
        self.n = series.n
        self.offset, self.Z = self.family.linear_signal(psi, self.n, u)
        self.mask = self.family.observed_mask(self.data)
        self.p = self.Z.shape[0]
        A, Q = psi.A, psi.Q
        self.A, self.Q = A, Q
        P1 = A @ psi.P0 @ A.T + Q
        Lq = np.linalg.cholesky(Q)
        L1 = np.linalg.cholesky(0.5 * (P1 + P1.T))
        self._Qinv_chol = np.linalg.inv(Lq)
        self._P1inv_chol = np.linalg.inv(L1)
        self._Qinv = self._Qinv_chol.T @ self._Qinv_chol
        self._P1inv = self._P1inv_chol.T @ self._P1inv_chol
        self._prior_const = (-np.log(np.diag(L1)).sum()
                             - (self.n - 1) * np.log(np.diag(Lq)).sum()
                             - 0.5 * self.n * psi.s * LOG2PI)
        self._diag = getattr(self.family, "diagonal_hessian", False)

    def prior_mean(self):
        x = np.empty((self.n, self.psi.s))
        m = self.psi.a0
        for k in range(self.n):
            m = self.A @ m
            x[k] = m
        return x

    def theta_of(self, x):
        return self.offset + x @ self.Z.T

    def _residuals(self, x):
        r = x.copy()
        r[0] -= self.A @ self.psi.a0
        r[1:] -= x[:-1] @ self.A.T
        return r

    def log_prior(self, x):
        r = self._residuals(x)
        z1 = self._P1inv_chol @ r[0]
        z = r[1:] @ self._Qinv_chol.T
        return float(-0.5 * (z1 @ z1 + (z * z).sum()) + self._prior_const)

    def prior_grad(self, x):
        r = self._residuals(x)
        w = r @ self._Qinv
        w[0] = self._P1inv @ r[0]
        g = -w
        g[:-1] += w[1:] @ self.A
        return g

    def aux_model(self, theta, g, H):
        """Auxiliary linear-Gaussian model at expansion point ``theta``."""
        n, p = theta.shape
        mask = self.mask
        Hm = H.copy()
        gm = np.where(mask, g, 0.0)
        off = ~mask
        if off.any():
            # neutralize unobserved components so the blocks stay invertible
            ks, js = np.nonzero(off)
            Hm[ks, js, :] = 0.0
            Hm[ks, :, js] = 0.0
            Hm[ks, js, js] = -1.0
        if self._diag:
            h = -np.diagonal(Hm, axis1=1, axis2=2)
            if not np.all(h > 0):
                bad = int(np.nonzero(~(h > 0).all(axis=1))[0][0])
                raise StepRejectionError(
                    f"Hessian block not negative definite at period {bad}", period=bad)
            L = np.zeros_like(Hm)
            idx = np.arange(p)
            L[:, idx, idx] = np.sqrt(h)
            noise = np.zeros_like(Hm)
            noise[:, idx, idx] = 1.0 / h
            y = theta + gm / h
        else:
            try:
                L = np.linalg.cholesky(-Hm)
            except np.linalg.LinAlgError:
                bad = next(k for k in range(n) if np.any(np.linalg.eigvalsh(-Hm[k]) <= 0))
                raise StepRejectionError(
                    f"Hessian block not negative definite at period {bad}", period=bad) from None
            Linv = np.linalg.inv(L)
            noise = np.einsum("kji,kjl->kil", Linv, Linv)
            y = theta + np.einsum("kij,kj->ki", noise, gm)
        ssm = LinearGaussianSSM(y=y, Z=self.Z, H=noise, A=self.A, Q=self.Q,
                                a0=self.psi.a0, P0=self.psi.P0, c=self.offset, mask=mask)
        return ssm, gm, noise, L


def estimate_mode(family, series, psi, u=None, tol=1e-8, max_iter=100, grad_tol=1e-6,
                  data=None, x_init=None, safeguard=True):
    """Posterior mode of the signals by Newton-Raphson on Kalman smoothing.

    Parameters
    ----------
    tol : float
        Stop once the sup-norm change of the signals is at most ``tol``.
    grad_tol : float
        Once the step criterion holds, up to three further Newton steps are
        taken while the latent-space gradient sup-norm exceeds ``grad_tol``.
    x_init : ndarray, optional
        Starting latent path; defaults to the prior mean path.
    safeguard : bool
        Halve a Newton step while it decreases the log posterior.

    Raises
    ------
    NonConvergenceError
        ``max_iter`` reached; carries the last iterate.
    StepRejectionError
        A Hessian block is not negative definite.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    prob = family if isinstance(family, _Problem) else _Problem(family, series, psi, u, data)
    return _mode(prob, tol, max_iter, grad_tol, x_init, safeguard)


def _mode(prob, tol, max_iter, grad_tol, x_init, safeguard, max_polish=3):
    fam, data = prob.family, prob.data
    x = prob.prior_mean() if x_init is None else np.array(x_init, dtype=float)
    theta = prob.theta_of(x)
    val, g, H = fam.value_grad_hess(theta, data)
    J = val.sum() + prob.log_prior(x)
    step = np.inf
    polish = 0
    Ps = None
    for it in range(max_iter + 1):
        if step <= tol:
            gx = np.where(prob.mask, g, 0.0) @ prob.Z + prob.prior_grad(x)
            grad_norm = float(np.max(np.abs(gx))) if gx.size else 0.0
            if grad_norm <= grad_tol or polish >= max_polish:
                break
            polish += 1
        if it == max_iter:
            raise NonConvergenceError(
                f"mode estimation did not converge in {max_iter} iterations "
                f"(last step {step:.3e})", last_iterate=theta, iterations=max_iter)
        ssm, _, _, _ = prob.aux_model(theta, g, H)
        xs, Ps = kalman_smoother(ssm)
        lam = 1.0
        while True:
            xt = xs if lam == 1.0 else x + lam * (xs - x)
            theta_new = prob.theta_of(xt)
            val, g_new, H_new = fam.value_grad_hess(theta_new, data)
            J_new = val.sum() + prob.log_prior(xt)
            if not safeguard or J_new >= J - 1e-12 * abs(J) or lam <= 1e-6:
                break
            lam *= 0.5
        step = float(np.max(np.abs(theta_new - theta))) if theta.size else 0.0
        x, theta, g, H, J = xt, theta_new, g_new, H_new, J_new
    return ModeResult(theta_mode=theta, x_mode=x, x_cov=Ps, iterations=it,
                      final_step_norm=step, grad_norm=grad_norm, grad=g, hess=H,
                      family=fam.name)


def laplace_loglik(family, series, psi, u=None, tol=1e-8, max_iter=100, data=None,
                   x_init=None, mode=None):
    """Laplace approximation of ``log p(M | psi)``.

    ``log C = (P/2) log 2pi + 1/2 log det(-H^{-1}) + log p(M | theta~)
    - 1/2 g' H^{-1} g`` with ``P`` the number of observed signal
    components; the total adds the Kalman log-likelihood of the auxiliary
    model built at the mode.
    """
    prob = _Problem(family, series, psi, u, data)
    if mode is None:
        mode = _mode(prob, tol, max_iter, 1e-6, x_init, True)
    return _laplace_at(prob, mode)


def _laplace_at(prob, mode):
    theta, g, H = mode.theta_mode, mode.grad, mode.hess
    ssm, gm, noise, L = prob.aux_model(theta, g, H)
    f = kalman_filter(ssm)
    mask = prob.mask
    P = int(mask.sum())
    # log det(-H^{-1}) over observed components; unobserved ones are unit-variance fillers
    logdet_noise = -2.0 * np.log(np.diagonal(L, axis1=1, axis2=2)).sum()
    quad = np.einsum("ki,kij,kj->", gm, noise, gm)
    loglik_theta = float(prob.family.loglik(theta, prob.data).sum())
    logC = 0.5 * P * LOG2PI + 0.5 * logdet_noise + loglik_theta + 0.5 * quad
    return LaplaceLikelihood(loglik=float(logC + f.loglik), logC=float(logC), aux_ssm=ssm,
                             pseudo_obs=ssm.y, mode=mode, filtered=f)


class LaplaceObjective:
    """Callable ``vector -> Laplace loglik`` that warm-starts mode estimation.

    Mode estimation from the previous mode converges in fewer Newton steps
    when the optimizer moves in small increments.  Errors are turned into
    ``-inf`` so that a simplex search steps away from them; the last error
    is kept in ``last_error``.
    """

    def __init__(self, family, series, pmap, u=None, tol=1e-8, max_iter=100):
        self.family = get_family(family)
        self.series = series
        self.pmap = pmap
        self.u = u
        self.tol = tol
        self.max_iter = max_iter
        self.data = self.family.prepare(series)
        self.n_evals = 0
        self.last_error = None
        self._x_prev = None

    def evaluate(self, vec, raise_errors=False):
        self.n_evals += 1
        psi = self.pmap.build(vec)
        try:
            prob = _Problem(self.family, self.series, psi, self.u, self.data)
            x0 = self._x_prev if self._x_prev is not None and self._x_prev.shape[1] == psi.s else None
            mode = _mode(prob, self.tol, self.max_iter, 1e-6, x0, True)
            res = _laplace_at(prob, mode)
        except (CalibrationError, np.linalg.LinAlgError, FloatingPointError) as exc:
            if raise_errors:
                raise
            self.last_error = exc
            return -np.inf, None
        if not np.isfinite(res.loglik):
            return -np.inf, None
        self._x_prev = mode.x_mode
        return res.loglik, res

    def __call__(self, vec):
        return self.evaluate(vec)[0]


@dataclass(frozen=True, eq=False)
class MLEResult:
    """Maximum-likelihood estimate with the latent path at the optimum."""

    psi_hat: object
    params: dict
    vector: np.ndarray
    loglik: float
    latent: np.ndarray
    mode: Optional[ModeResult]
    n_evals: int
    converged: bool
    starts: list = field(default_factory=list)


def nelder_mead_multistart(fun, starts, lower, upper, xatol=1e-4, fatol=1e-4, maxiter=2000):
    """Maximize ``fun`` by bounded Nelder-Mead from each start; best result wins."""
    best = None
    runs = []
    bounds = list(zip(lower, upper))
    for x0 in starts:
        x0 = np.clip(np.asarray(x0, dtype=float), lower, upper)
        res = minimize(lambda v: -fun(v), x0, method="Nelder-Mead", bounds=bounds,
                       options={"xatol": xatol, "fatol": fatol, "maxiter": maxiter,
                                "maxfev": maxiter * 2})
        runs.append(res)
        if np.isfinite(res.fun) and (best is None or res.fun < best.fun):
            best = res
    return best, runs


def mle_laplace(family, series, u=None, pmap=None, starts=None, tol=1e-8,
                xatol=1e-4, fatol=1e-4):
    """Maximize the Laplace likelihood over the free parameters of ``pmap``.

    Parameters
    ----------
    pmap : ParameterMap, optional
        Free-parameter map; defaults to the unit-variance map of the family
        with levels moment-matched to the series.
    starts : sequence of vectors, optional
        Simplex starting points; defaults to ``pmap.starts``.
    """
    from .params import default_map

    family = get_family(family)
    if pmap is None:
        pmap = default_map(family, series)
    obj = LaplaceObjective(family, series, pmap, u=u, tol=tol)
    best, runs = nelder_mead_multistart(obj, pmap.starts if starts is None else starts,
                                        pmap.lower, pmap.upper, xatol=xatol, fatol=fatol)
    if best is None:
        raise CalibrationError(f"Laplace likelihood could not be evaluated at any start: "
                               f"{obj.last_error}")
    obj._x_prev = None
    ll, res = obj.evaluate(best.x, raise_errors=True)
    psi_hat = pmap.build(best.x)
    return MLEResult(psi_hat=psi_hat, params=pmap.as_dict(best.x), vector=np.array(best.x),
                     loglik=ll, latent=res.mode.x_mode, mode=res.mode, n_evals=obj.n_evals,
                     converged=bool(best.success),
                     starts=[(np.array(r.x), -float(r.fun)) for r in runs])
