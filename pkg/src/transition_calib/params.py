"""Free-parameter maps used by the optimizers.

A map turns a short vector (AR coefficients, loadings, correlation) into a
full :class:`ModelParameters` under the unit-variance convention, with the
levels ``d`` matched to the series' long-run average frequencies for the
current loadings.
"""

import numpy as np

from .domain import ModelParameters
from .models import (DefaultOnlyProbit, MultiFactorLogistic, PerformingProbit,
                     TwoFactorProbit, get_family)
from .simulate import (derive_d_from_average, empirical_cumulative_nd,
                       empirical_default_rate)

A_BOUNDS = (0.01, 0.99)
K_BOUNDS = (0.01, 2.0)
RHO_BOUNDS = (-0.95, 0.95)
RATE_CLIP = 1e-6


def _clip_rates(r):
    return np.clip(np.asarray(r, dtype=float), RATE_CLIP, 1.0 - RATE_CLIP)


def _strictly_decreasing(cum):
    """Nudge cumulative rates so each row is strictly decreasing."""
    cum = _clip_rates(cum).copy()
    for j in range(1, cum.shape[1]):
        cum[:, j] = np.minimum(cum[:, j], cum[:, j - 1] * (1.0 - 1e-9))
    return cum


class ParameterMap:
    """Vector <-> ModelParameters with box bounds and fixed starting points."""

    names = ()
    lower = ()
    upper = ()
    starts = ()

    def build(self, vec):
        raise NotImplementedError

    def as_dict(self, vec):
        return {k: float(v) for k, v in zip(self.names, vec)}

    def vector(self, values):
        """Vector from a mapping ``name -> value``."""
        return np.array([values[k] for k in self.names], dtype=float)

    def clip(self, vec):
        return np.clip(np.asarray(vec, dtype=float), self.lower, self.upper)


class DefaultOnlyMap(ParameterMap):
    """``(a, k)`` for the one-factor default-only model."""

    names = ("a", "k")
    lower = np.array([A_BOUNDS[0], K_BOUNDS[0]])
    upper = np.array([A_BOUNDS[1], K_BOUNDS[1]])
    starts = (np.array([0.5, 0.5]), np.array([0.8, 0.2]), np.array([0.3, 1.0]))

    def __init__(self, pd_bar):
        self.pd_bar = _clip_rates(pd_bar)

    def build(self, vec):
        a, k = np.asarray(vec, dtype=float)
        return ModelParameters.unit_variance(d=derive_d_from_average(self.pd_bar, k),
                                             K=[k], A=[a])


class PerformingMap(ParameterMap):
    """``(a, k)`` for the ordered probit on no-default migrations."""

    names = ("a", "k")
    lower = DefaultOnlyMap.lower
    upper = DefaultOnlyMap.upper
    starts = DefaultOnlyMap.starts

    def __init__(self, nd_cumulative):
        self.cum = _strictly_decreasing(nd_cumulative)

    def build(self, vec):
        a, k = np.asarray(vec, dtype=float)
        R = self.cum.shape[0] + 1
        d = np.zeros((R - 1, R))
        d[:, 0] = np.inf
        d[:, 1:R - 1] = derive_d_from_average(self.cum, k)
        return ModelParameters.unit_variance(d=d, K=[k], A=[a])


class TwoFactorMap(ParameterMap):
    """``(a_d, a_p, k_d, k_p, rho)`` for the two-factor probit model."""

    names = ("a_d", "a_p", "k_d", "k_p", "rho")
    lower = np.array([A_BOUNDS[0], A_BOUNDS[0], K_BOUNDS[0], K_BOUNDS[0], RHO_BOUNDS[0]])
    upper = np.array([A_BOUNDS[1], A_BOUNDS[1], K_BOUNDS[1], K_BOUNDS[1], RHO_BOUNDS[1]])
    starts = (np.array([0.5, 0.5, 0.3, 0.3, 0.0]),
              np.array([0.8, 0.8, 0.2, 0.2, 0.3]),
              np.array([0.3, 0.3, 0.6, 0.6, -0.3]))

    def __init__(self, pd_bar, nd_cumulative):
        self.pd_bar = _clip_rates(pd_bar)
        self.cum = _strictly_decreasing(nd_cumulative)

    def build(self, vec):
        a_d, a_p, k_d, k_p, rho = np.asarray(vec, dtype=float)
        R = self.pd_bar.size + 1
        d = np.empty((R - 1, R))
        d[:, 0] = np.inf
        d[:, 1:R - 1] = derive_d_from_average(self.cum, k_p)
        d[:, R - 1] = derive_d_from_average(self.pd_bar, k_d)
        return ModelParameters.unit_variance(d=d, K=[k_d, k_p], A=[a_d, a_p], rho=rho)


class FixedLevelsMap(ParameterMap):
    """``(a_1..a_s, k)``: diagonal AR factor, loadings ``k * K_shape``, fixed ``d``.

    Suitable for the logistic family, where no moment-matching formula for
    the levels is available.
    """

    def __init__(self, d, K_shape, s=1):
        self.d = np.asarray(d, dtype=float)
        self.K_shape = np.asarray(K_shape, dtype=float)
        self.s = s
        self.names = tuple(f"a{i + 1}" for i in range(s)) + ("k",)
        self.lower = np.array([A_BOUNDS[0]] * s + [K_BOUNDS[0]])
        self.upper = np.array([A_BOUNDS[1]] * s + [K_BOUNDS[1]])
        self.starts = tuple(np.array([a] * s + [k]) for a, k in ((0.5, 0.5), (0.8, 0.2),
                                                                  (0.3, 1.0)))

    def build(self, vec):
        vec = np.asarray(vec, dtype=float)
        return ModelParameters.unit_variance(d=self.d, K=vec[-1] * self.K_shape,
                                             A=vec[:self.s])


def default_map(family, series):
    """Unit-variance map of ``family`` with levels matched to ``series``."""
    family = get_family(family)
    if isinstance(family, DefaultOnlyProbit):
        return DefaultOnlyMap(empirical_default_rate(series))
    if isinstance(family, PerformingProbit):
        return PerformingMap(empirical_cumulative_nd(series))
    if isinstance(family, TwoFactorProbit):
        return TwoFactorMap(empirical_default_rate(series), empirical_cumulative_nd(series))
    if isinstance(family, MultiFactorLogistic):
        raise ValueError("the logistic family needs an explicit parameter map")
    raise ValueError(f"no default parameter map for {family!r}")
