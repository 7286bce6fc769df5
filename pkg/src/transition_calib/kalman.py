"""Linear-Gaussian state-space filtering, smoothing and exact likelihood.

Model, for ``k = 1..n``::

    x_k = A_k x_{k-1} + eta_k,      eta_k ~ N(0, Q_k)
    y_k = c_k + Z_k x_k + eps_k,    eps_k ~ N(0, H_k)
    x_0 ~ N(a0, P0)

Observation components can be switched off per period with ``mask``; a
masked component contributes nothing to the update or the likelihood.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _backend
from .errors import DimensionError


def _per_period(M, n, shape, what):
    M = np.asarray(M, dtype=float)
    if M.shape == shape:
        M = np.broadcast_to(M, (n,) + shape)
    if M.shape != (n,) + shape:
        raise DimensionError(f"{what} must have shape {shape} or {(n,) + shape}, got {M.shape}")
    return np.ascontiguousarray(M)


@dataclass(frozen=True, eq=False)
class LinearGaussianSSM:
    """Time-varying linear-Gaussian state-space model with observations.

    ``Z``, ``H``, ``A`` and ``Q`` may be given once (shared by all periods)
    or stacked per period.  ``c`` defaults to zero and ``mask`` to all
    components observed.
    """

    y: np.ndarray
    Z: np.ndarray
    H: np.ndarray
    A: np.ndarray
    Q: np.ndarray
    a0: np.ndarray
    P0: np.ndarray
    c: Optional[np.ndarray] = None
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        n, p = y.shape
        a0 = np.atleast_1d(np.asarray(self.a0, dtype=float))
        s = a0.shape[0]
        Z = np.asarray(self.Z, dtype=float)
        if Z.ndim < 2:
            Z = Z.reshape(p, s)
        set_ = object.__setattr__
        set_(self, "y", np.ascontiguousarray(y))
        set_(self, "a0", np.ascontiguousarray(a0))
        set_(self, "P0", np.ascontiguousarray(np.atleast_2d(np.asarray(self.P0, float))))
        if self.P0.shape != (s, s):
            raise DimensionError("P0 must be s x s")
        set_(self, "Z", _per_period(Z, n, (p, s), "Z"))
        set_(self, "H", _per_period(np.atleast_2d(self.H) if np.ndim(self.H) < 2 else self.H,
                                    n, (p, p), "H"))
        set_(self, "A", _per_period(np.atleast_2d(self.A) if np.ndim(self.A) < 2 else self.A,
                                    n, (s, s), "A"))
        set_(self, "Q", _per_period(np.atleast_2d(self.Q) if np.ndim(self.Q) < 2 else self.Q,
                                    n, (s, s), "Q"))
        c = np.zeros((n, p)) if self.c is None else np.asarray(self.c, dtype=float)
        if c.shape != (n, p):
            raise DimensionError(f"offset c must have shape {(n, p)}")
        set_(self, "c", np.ascontiguousarray(c))
        mask = np.ones((n, p), dtype=bool) if self.mask is None else np.asarray(self.mask, bool)
        if mask.shape != (n, p):
            raise DimensionError(f"mask must have shape {(n, p)}")
        set_(self, "mask", np.ascontiguousarray(mask.astype(np.uint8)))

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def p(self):
        return self.y.shape[1]

    @property
    def s(self):
        return self.a0.shape[0]


@dataclass(frozen=True, eq=False)
class FilterOutput:
    """Predicted and filtered moments plus the log-likelihood."""

    x_pred: np.ndarray
    P_pred: np.ndarray
    x_filt: np.ndarray
    P_filt: np.ndarray
    per_period: np.ndarray

    @property
    def loglik(self):
        return float(self.per_period.sum())


def kalman_filter(ssm):
    """Run the Kalman filter; raises ConditioningError on a singular S_k."""
    x_pred, P_pred, x_filt, P_filt, ll = _backend.kalman_filter_core(
        ssm.y, ssm.c, ssm.Z, ssm.H, ssm.mask, ssm.A, ssm.Q, ssm.a0, ssm.P0)
    return FilterOutput(x_pred, P_pred, x_filt, P_filt, ll)


def kalman_smoother(ssm, filtered=None):
    """Fixed-interval (RTS) smoothed means and covariances.

    Returns
    -------
    xs : ndarray, shape (n, s)
    Ps : ndarray, shape (n, s, s)
    """
    f = kalman_filter(ssm) if filtered is None else filtered
    return _backend.rts_smoother_core(ssm.A, f.x_pred, f.P_pred, f.x_filt, f.P_filt)


def psd_sqrt(P):
    """Symmetric square roots of a stack of PSD matrices."""
    w, V = np.linalg.eigh(P)
    w = np.clip(w, 0.0, None)
    return V * np.sqrt(w)[..., None, :]


def kalman_posterior_draws(ssm, count, rng, filtered=None):
    """Independent draws from each filtered posterior ``N(x_k|k, P_k|k)``.

    Returns an array of shape ``(n, count, s)``.
    """
    f = kalman_filter(ssm) if filtered is None else filtered
    S = psd_sqrt(f.P_filt)
    z = rng.standard_normal((ssm.n, count, ssm.s))
    return f.x_filt[:, None, :] + np.einsum("kij,kcj->kci", S, z)

