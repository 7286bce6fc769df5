"""Response families: signals -> transition probabilities -> log-likelihoods.

Each family exposes two views of its signals:

* the *full* layout used by :func:`signal_from_factors`,
  :func:`transition_probs` and :func:`signal_grad_hess`;
* the *state-space* layout, a per-period vector ``theta_k = offset_k + Z x_k``
  of length ``p`` used by mode estimation, the Laplace likelihood and the
  particle filters.

For the probit families both layouts coincide.  The logistic family is
invariant to adding a constant to a row, so its Hessian in the full layout
is singular; its state-space layout uses contrasts against the default
column, which carry the same likelihood and have an invertible Hessian.

Layouts (``R`` ratings, ``n`` periods, ``s`` latent factors):

=====================  ============  ===============  ===============
family                 ``d``         ``K``            full theta
=====================  ============  ===============  ===============
DefaultOnlyProbit      ``(R-1,)``    ``(s,)``         ``(n, R-1)``
PerformingProbit       ``(R-1, R)``  ``(1,)``         ``(n, 1)``
TwoFactorProbit        ``(R-1, R)``  ``(2,)`` diag    ``(n, 2)``
MultiFactorLogistic    ``(R-1, R)``  ``(R-1, R, s)``  ``(n, R-1, R)``
=====================  ============  ===============  ===============

For the ordered-probit rows ``d[:, 0]`` is ``+inf``; ``d[:, 1:R-1]`` are the
performing thresholds (strictly decreasing) and ``d[:, R-1]`` is the
default threshold.
"""

import numpy as np
from scipy.special import gammaln, logsumexp, ndtr, ndtri

from . import _backend
from ._kernels_py import log_interval
from .domain import LatentPath, SignalPath, as_factors
from .errors import DimensionError


def norm_cdf(x):
    return ndtr(x)


def norm_ppf(p):
    return ndtri(p)


def _xlogy(m, logp):
    """m * logp with the convention 0 * (-inf) = 0."""
    return np.where(m > 0, m * np.where(m > 0, logp, 0.0), 0.0)


def _c(a):
    return np.ascontiguousarray(a, dtype=float)


def _binomial(theta, m, nm):
    """Value, first and second derivative of m log Phi(t) + nm log Phi(-t)."""
    theta = _c(theta)
    return _backend.probit_binomial_terms(theta, _c(np.broadcast_to(m, theta.shape)),
                                          _c(np.broadcast_to(nm, theta.shape)))


def _ordered(theta, upper, lower, counts):
    """Ordered-probit terms summed over rows and columns, per entry of theta."""
    theta = _c(theta)
    counts = _c(np.broadcast_to(counts, theta.shape + upper.shape))
    return _backend.ordered_probit_terms(theta, _c(upper), _c(lower), counts)


def multinomial_logcoef(counts):
    counts = np.asarray(counts, dtype=float)
    return gammaln(counts.sum(axis=-1) + 1.0) - gammaln(counts + 1.0).sum(axis=-1)


def _diag_blocks(h):
    n, p = h.shape
    H = np.zeros((n, p, p))
    H[:, np.arange(p), np.arange(p)] = h
    return H


class ResponseFamily:
    """Interface shared by the response families.

    ``prepare`` turns a series into family-specific arrays once; ``bind``
    attaches parameter-dependent constants (thresholds) before evaluation.
    """

    name = ""

    def check_params(self, psi, R):
        raise NotImplementedError

    def n_signals(self, R):
        raise NotImplementedError

    def linear_signal(self, psi, n, u=None):
        """State-space offset ``(n, p)`` and loading matrix ``Z`` ``(p, s)``."""
        raise NotImplementedError

    def prepare(self, series):
        raise NotImplementedError

    def bind(self, psi, data):
        return data

    def value_grad_hess(self, theta, data):
        """Per-period ``log p(M_k | theta_k)`` ``(n,)``, gradient ``(n, p)``
        and Hessian blocks ``(n, p, p)`` for signals ``theta`` ``(n, p)``."""
        raise NotImplementedError

    def loglik(self, theta, data):
        return self.value_grad_hess(theta, data)[0]

    def grad_hess(self, theta, data):
        return self.value_grad_hess(theta, data)[1:]

    def loglik_period(self, theta, data, k):
        """``log p(M_k | theta)`` for a batch of signals ``(N, p)``."""
        raise NotImplementedError

    def observed_mask(self, data):
        """``(n, p)`` flags of signal components that carry information."""
        raise NotImplementedError

    def signal_path(self, psi, x, u=None):
        offset, Z = self.linear_signal(psi, x.shape[0], u)
        return offset + x @ Z.T

    def particle_loglik(self, x, k, offset, Z, data):
        return self.loglik_period(offset[k] + x @ Z.T, data, k)

    def __repr__(self):
        return f"{type(self).__name__}()"


class _DefaultData:
    def __init__(self, series):
        self.m = _c(series.defaults)
        self.N = _c(series.row_totals)
        self.nm = self.N - self.m
        self.const = (gammaln(self.N + 1) - gammaln(self.m + 1)
                      - gammaln(self.nm + 1)).sum(axis=1)
        self.n = series.n
        self.R = series.R


class DefaultOnlyProbit(ResponseFamily):
    """One probit signal per performing row; only defaults are modelled."""

    name = "default_only"
    diagonal_hessian = True

    def check_params(self, psi, R):
        if psi.d.shape != (R - 1,):
            raise DimensionError(f"default-only d must have shape ({R - 1},)")
        if psi.K.reshape(-1).shape != (psi.s,):
            raise DimensionError("default-only K must hold one loading per factor")

    def n_signals(self, R):
        return R - 1

    def linear_signal(self, psi, n, u=None):
        R1 = psi.d.shape[0]
        offset = np.broadcast_to(psi.d, (n, R1)).copy()
        u = as_factors(u, n)
        if u is not None and psi.L is not None:
            offset += (u @ np.atleast_1d(psi.L))[:, None]
        Z = np.tile(psi.K.reshape(1, -1), (R1, 1))
        return offset, Z

    def prepare(self, series):
        return _DefaultData(series)

    def value_grad_hess(self, theta, data):
        val, g, h = _binomial(theta, data.m, data.nm)
        return val.sum(axis=1) + data.const, g, _diag_blocks(h)

    def loglik_period(self, theta, data, k):
        val, _, _ = _binomial(theta, data.m[k], data.nm[k])
        return val.sum(axis=-1) + data.const[k]

    def particle_loglik(self, x, k, offset, Z, data):
        out = _backend.probit_binomial_particles(_c(x), _c(offset[k]), _c(Z),
                                                 data.m[k], data.nm[k])
        return out + data.const[k]

    def observed_mask(self, data):
        return data.N > 0

    def probs(self, theta, d=None):
        theta = np.asarray(theta, dtype=float)
        return np.stack([ndtr(-theta), ndtr(theta)], axis=-1)


class _PerformingData:
    def __init__(self, series):
        nd = _c(series.counts[:, :, :-1])
        self.counts = nd
        self.N = nd.sum(axis=2)
        self.const = multinomial_logcoef(nd).sum(axis=1)
        self.n = series.n
        self.R = series.R


def _threshold_bounds(d):
    """Upper/lower threshold arrays ``(R-1, R-1)`` for the performing columns."""
    d = np.asarray(d, dtype=float)
    R = d.shape[-1]
    upper = d[..., : R - 1].copy()
    upper[..., 0] = np.inf
    lower = np.empty_like(upper)
    lower[..., : R - 2] = d[..., 1 : R - 1]
    lower[..., R - 2] = -np.inf
    return upper, lower


def _check_thresholds(d):
    d = np.atleast_2d(np.asarray(d, dtype=float))
    perf = d[:, 1:-1]
    if not np.all(np.isfinite(perf)) or not np.all(np.isfinite(d[:, -1])):
        raise ValueError("thresholds d[:, 1:] must be finite")
    if perf.shape[1] > 1 and np.any(np.diff(perf, axis=1) >= 0):
        raise ValueError("performing thresholds must be strictly decreasing")


class PerformingProbit(ResponseFamily):
    """Ordered probit for migrations among performing ratings, given survival.

    One shared performing signal per period; this is the second factor of
    :class:`TwoFactorProbit` in isolation.  The default column of ``d`` is
    ignored.
    """

    name = "performing"
    diagonal_hessian = True

    def check_params(self, psi, R):
        if psi.d.shape != (R - 1, R):
            raise DimensionError(f"performing d must have shape ({R - 1}, {R})")
        if psi.K.reshape(-1).shape != (1,) or psi.s != 1:
            raise DimensionError("performing model has a single factor")
        perf = psi.d[:, 1:-1]
        if perf.shape[1] > 1 and np.any(np.diff(perf, axis=1) >= 0):
            raise ValueError("performing thresholds must be strictly decreasing")

    def n_signals(self, R):
        return 1

    def linear_signal(self, psi, n, u=None):
        offset = np.zeros((n, 1))
        u = as_factors(u, n)
        if u is not None and psi.L is not None:
            offset[:, 0] += u @ np.atleast_1d(psi.L)
        return offset, psi.K.reshape(1, 1)

    def prepare(self, series):
        return _PerformingData(series)

    def bind(self, psi, data):
        data.upper, data.lower = (_c(b) for b in _threshold_bounds(psi.d))
        return data

    def value_grad_hess(self, theta, data):
        val, g, h = _ordered(theta[:, 0], data.upper, data.lower, data.counts)
        return val + data.const, g[:, None], h[:, None, None]

    def loglik_period(self, theta, data, k):
        val, _, _ = _ordered(theta[:, 0], data.upper, data.lower, data.counts[k])
        return val + data.const[k]

    def observed_mask(self, data):
        return (data.N > 0).any(axis=1)[:, None]

    def probs(self, theta, d):
        """Probabilities over performing columns given no default."""
        upper, lower = _threshold_bounds(np.atleast_2d(d))
        t = np.asarray(theta, dtype=float)[..., None]
        return np.exp(log_interval(upper + t, lower + t))


class _TwoFactorData:
    def __init__(self, series):
        self.default = _DefaultData(series)
        self.perf = _PerformingData(series)
        self.n = series.n
        self.R = series.R


class TwoFactorProbit(ResponseFamily):
    """Default signal and performing signal, each with its own AR factor.

    ``T_iR = Phi(d_iR + theta_D)`` and
    ``T_ij = (1 - T_iR) (Phi(d_ij + theta_P) - Phi(d_i,j+1 + theta_P))``.
    """

    name = "two_factor"
    diagonal_hessian = True
    _perf = PerformingProbit()

    def check_params(self, psi, R):
        if psi.d.shape != (R - 1, R):
            raise DimensionError(f"two-factor d must have shape ({R - 1}, {R})")
        if psi.K.reshape(-1).shape != (2,) or psi.s != 2:
            raise DimensionError("two-factor K must be the diagonal (k_d, k_p)")
        _check_thresholds(psi.d)

    def n_signals(self, R):
        return 2

    def linear_signal(self, psi, n, u=None):
        offset = np.zeros((n, 2))
        u = as_factors(u, n)
        if u is not None and psi.L is not None:
            offset += u * np.atleast_1d(psi.L).reshape(1, 2)
        return offset, np.diag(psi.K.reshape(2))

    def prepare(self, series):
        return _TwoFactorData(series)

    def bind(self, psi, data):
        data.dR = _c(psi.d[:, -1])
        self._perf.bind(psi, data.perf)
        return data

    def value_grad_hess(self, theta, data):
        dd, pd = data.default, data.perf
        valD, gD, hD = _binomial(theta[:, :1] + data.dR, dd.m, dd.nm)
        valP, gP, hP = _ordered(theta[:, 1], pd.upper, pd.lower, pd.counts)
        val = valD.sum(axis=1) + valP + dd.const + pd.const
        H = np.zeros((theta.shape[0], 2, 2))
        H[:, 0, 0] = hD.sum(axis=1)
        H[:, 1, 1] = hP
        return val, np.column_stack([gD.sum(axis=1), gP]), H

    def loglik_period(self, theta, data, k):
        dd, pd = data.default, data.perf
        valD, _, _ = _binomial(theta[:, :1] + data.dR, dd.m[k], dd.nm[k])
        valP, _, _ = _ordered(theta[:, 1], pd.upper, pd.lower, pd.counts[k])
        return valD.sum(axis=-1) + valP + dd.const[k] + pd.const[k]

    def observed_mask(self, data):
        return np.column_stack([(data.default.N > 0).any(axis=1),
                                (data.perf.N > 0).any(axis=1)])

    def probs(self, theta, d):
        d = np.asarray(d, dtype=float)
        _check_thresholds(d)
        theta = np.asarray(theta, dtype=float)
        pd = ndtr(d[..., -1] + theta[0])
        tnd = self._perf.probs(theta[1], d)
        if d.ndim == 1:
            tnd = tnd[0]
        return np.concatenate([(1.0 - pd)[..., None] * tnd, pd[..., None]], axis=-1)


class _LogisticData:
    def __init__(self, series):
        self.counts = _c(series.counts)
        self.N = self.counts.sum(axis=2)
        self.const = multinomial_logcoef(self.counts).sum(axis=1)
        self.n = series.n
        self.R = series.R


class MultiFactorLogistic(ResponseFamily):
    """Softmax over each row: ``T_ij = exp(theta_ij) / sum_j exp(theta_ij)``."""

    name = "logistic"

    def check_params(self, psi, R):
        if psi.d.shape != (R - 1, R):
            raise DimensionError(f"logistic d must have shape ({R - 1}, {R})")
        if psi.K.shape != (R - 1, R, psi.s):
            raise DimensionError(f"logistic K must have shape ({R - 1}, {R}, {psi.s})")

    def n_signals(self, R):
        return (R - 1) * (R - 1)

    def linear_signal(self, psi, n, u=None):
        R = psi.d.shape[1]
        dc = (psi.d[:, :-1] - psi.d[:, -1:]).reshape(-1)
        Kc = (psi.K[:, :-1, :] - psi.K[:, -1:, :]).reshape((R - 1) * (R - 1), -1)
        offset = np.broadcast_to(dc, (n, dc.size)).copy()
        u = as_factors(u, n)
        if u is not None and psi.L is not None:
            Lc = (psi.L[:, :-1, :] - psi.L[:, -1:, :]).reshape(dc.size, -1)
            offset += u @ Lc.T
        return offset, Kc

    def prepare(self, series):
        return _LogisticData(series)

    def _contrast_parts(self, theta, counts, N):
        """theta: (..., R-1, R-1) contrasts; counts (..., R-1, R)."""
        full = np.concatenate([theta, np.zeros(theta.shape[:-1] + (1,))], axis=-1)
        lse = logsumexp(full, axis=-1)
        val = (counts[..., :-1] * theta).sum(axis=-1) - N * lse
        T = np.exp(theta - lse[..., None])
        return val, T

    def _shape(self, theta, R):
        return theta.reshape(theta.shape[:-1] + (R - 1, R - 1))

    def value_grad_hess(self, theta, data):
        R = data.R
        n = theta.shape[0]
        val, T = self._contrast_parts(self._shape(theta, R), data.counts, data.N)
        g = data.counts[:, :, :-1] - data.N[:, :, None] * T
        blocks = -data.N[:, :, None, None] * (
            T[..., :, None] * np.eye(R - 1) - T[..., :, None] * T[..., None, :])
        p = (R - 1) * (R - 1)
        H = np.zeros((n, p, p))
        for i in range(R - 1):
            sl = slice(i * (R - 1), (i + 1) * (R - 1))
            H[:, sl, sl] = blocks[:, i]
        return val.sum(axis=-1) + data.const, g.reshape(n, p), H

    def loglik_period(self, theta, data, k):
        val, _ = self._contrast_parts(self._shape(theta, data.R), data.counts[k], data.N[k])
        return val.sum(axis=-1) + data.const[k]

    def observed_mask(self, data):
        return np.repeat(data.N > 0, data.R - 1, axis=1)

    def signal_path(self, psi, x, u=None):
        theta = psi.d[None] + np.einsum("ijs,ks->kij", psi.K, x)
        u = as_factors(u, x.shape[0])
        if u is not None and psi.L is not None:
            theta = theta + np.einsum("ijl,kl->kij", psi.L, u)
        return theta

    def probs(self, theta, d=None):
        theta = np.asarray(theta, dtype=float)
        z = theta - theta.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)


DEFAULT_ONLY = DefaultOnlyProbit()
PERFORMING = PerformingProbit()
TWO_FACTOR = TwoFactorProbit()
LOGISTIC = MultiFactorLogistic()

FAMILIES = {f.name: f for f in (DEFAULT_ONLY, PERFORMING, TWO_FACTOR, LOGISTIC)}


def get_family(family):
    if isinstance(family, ResponseFamily):
        return family
    try:
        return FAMILIES[str(family)]
    except KeyError:
        raise ValueError(f"unknown model family {family!r}; "
                         f"choose from {sorted(FAMILIES)}") from None


def bind(family, psi, data):
    """Attach parameter-dependent constants (thresholds) to prepared data."""
    return get_family(family).bind(psi, data)


# -- public operations ----------------------------------------------------

def signal_from_factors(family, psi, x, u=None):
    """Signals ``d + K'x_k + L'u_k`` in the family's full layout."""
    family = get_family(family)
    xs = x.x if isinstance(x, LatentPath) else np.asarray(x, dtype=float)
    if xs.ndim == 1:
        xs = xs[:, None]
    if xs.shape[1] != psi.s:
        raise DimensionError(f"latent path has {xs.shape[1]} factors, parameters have {psi.s}")
    return SignalPath(family.signal_path(psi, xs, u), family.name)


def transition_probs(family, d, theta_k):
    """Transition probabilities for one period.

    Default-only returns ``(survive, default)`` per row; the two-factor
    family returns the full row(s) of length ``R``; the logistic family
    returns the softmax of ``theta_k`` (which already includes ``d``).
    """
    family = get_family(family)
    return family.probs(theta_k, d)


def row_loglik(family, m_row, T_row):
    """Exact multinomial log-probability of one row of counts.

    For the default-only family ``T_row`` is ``(1 - PD, PD)`` and ``m_row``
    may be the full row; it is collapsed to (survivors, defaults).  Returns
    ``-inf`` when a positive count meets a zero probability.
    """
    family = get_family(family)
    m = np.asarray(m_row, dtype=float)
    T = np.asarray(T_row, dtype=float)
    if isinstance(family, DefaultOnlyProbit) and T.shape[-1] == 2 and m.shape[-1] != 2:
        m = np.stack([m[..., :-1].sum(axis=-1), m[..., -1]], axis=-1)
    if m.shape != T.shape:
        raise DimensionError("counts and probabilities differ in length")
    if np.any((T <= 0) & (m > 0)):
        return -np.inf
    with np.errstate(divide="ignore"):
        logT = np.log(T)
    return float(multinomial_logcoef(m) + _xlogy(m, logT).sum(axis=-1))


def signal_grad_hess(family, series, theta, psi):
    """Gradient and Hessian of ``log p(M | theta)`` in the full layout.

    Returns ``(D, H)`` with ``D`` shaped like ``theta`` and ``H`` holding the
    diagonal blocks: ``(n, p, p)`` per period for the probit families and
    ``(n, R-1, R, R)`` per row for the logistic family.
    """
    family = get_family(family)
    theta = theta.theta if isinstance(theta, SignalPath) else np.asarray(theta, float)
    data = bind(family, psi, family.prepare(series))
    if isinstance(family, MultiFactorLogistic):
        counts = data.counts
        N = data.N
        T = family.probs(theta)
        D = counts - N[..., None] * T
        R = T.shape[-1]
        H = -N[..., None, None] * (T[..., :, None] * np.eye(R) - T[..., :, None] * T[..., None, :])
        return D, H
    return family.grad_hess(theta, data)


def log_p_given_signal(family, series, theta, psi):
    """``log p(M | theta)`` summed over periods, full layout."""
    family = get_family(family)
    theta = theta.theta if isinstance(theta, SignalPath) else np.asarray(theta, float)
    data = bind(family, psi, family.prepare(series))
    if isinstance(family, MultiFactorLogistic):
        contrasts = (theta[..., :-1] - theta[..., -1:]).reshape(theta.shape[0], -1)
        return float(family.loglik(contrasts, data).sum())
    return float(family.loglik(theta, data).sum())
