"""Experiment drivers: likelihood profiles, scenario studies, stepwise calibration."""

import csv
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ._parallel import map_tasks, seed_sequence
from .errors import CalibrationError
from .gpr import default_grid, pf_gpr_mle
from .laplace import laplace_loglik, mle_laplace
from .models import DEFAULT_ONLY, PERFORMING, get_family
from .params import default_map
from .particle import bootstrap_pf, pf_importance
from .simulate import (HIGH_DEFAULT, TWO_FACTOR as TWO_FACTOR_SETUP, default_only_params,
                       simulate_migrations, two_factor_params)

PROFILE_METHODS = ("laplace", "pf_is", "pf_bootstrap")
STUDY_METHODS = ("laplace", "pf-gpr", "stepwise")
_POINT_ERRORS = (CalibrationError, np.linalg.LinAlgError, FloatingPointError)


# -- profiles -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ProfileTable:
    """Log-likelihood along one free parameter; failed points hold NaN."""

    axis: str
    values: np.ndarray
    loglik: np.ndarray
    method: str
    n_particles: Optional[int] = None
    seed: Optional[int] = None
    errors: dict = field(default_factory=dict)

    def write(self, path, fitted=None):
        with open(path, "w", newline="") as fh:
            fh.write(f"# axis={self.axis} method={self.method}")
            if self.n_particles is not None:
                fh.write(f" particles={self.n_particles} seed={self.seed}")
            fh.write("\n")
            w = csv.writer(fh)
            w.writerow(["value", "loglik"] + (["fitted"] if fitted is not None else []))
            for i, (v, ll) in enumerate(zip(self.values, self.loglik)):
                row = [repr(float(v)), repr(float(ll))]
                if fitted is not None:
                    row.append(repr(float(fitted[i])))
                w.writerow(row)


def likelihood_profile(family, series, base, axis, values, method="laplace", N=1000, seed=0,
                       u=None, pmap=None):
    """Log-likelihood as one free parameter varies, the others held at ``base``.

    Parameters
    ----------
    base : mapping
        Values of all free parameters of ``pmap`` (by name).
    axis : str
        Name of the parameter to vary.
    method : {"laplace", "pf_is", "pf_bootstrap"}
        Particle methods reuse the same seed at every point (common random
        numbers), so their curves are smooth in the parameter.
    """
    if method not in PROFILE_METHODS:
        raise ValueError(f"unknown profile method {method!r}; expected one of {PROFILE_METHODS}")
    family = get_family(family)
    if pmap is None:
        pmap = default_map(family, series)
    if axis not in pmap.names:
        raise ValueError(f"{axis!r} is not a free parameter; choose from {pmap.names}")
    values = np.asarray(values, dtype=float).reshape(-1)
    if values.size == 0:
        raise ValueError("profile needs at least one value")
    data = family.prepare(series)
    out = np.full(values.size, np.nan)
    errors = {}
    x_prev = None
    for i, v in enumerate(values):
        point = dict(base)
        point[axis] = float(v)
        psi = pmap.build(pmap.vector(point))
        try:
            if method == "laplace":
                res = laplace_loglik(family, series, psi, u=u, data=data, x_init=x_prev)
                x_prev = res.mode.x_mode
            elif method == "pf_is":
                res = pf_importance(family, series, psi, u=u, N=N,
                                    rng=np.random.default_rng(seed), data=data, x_init=x_prev)
                x_prev = res.mode.x_mode
            else:
                res = bootstrap_pf(family, series, psi, u=u, N=N,
                                   rng=np.random.default_rng(seed), data=data)
            out[i] = res.loglik
        except _POINT_ERRORS as exc:
            errors[i] = f"{type(exc).__name__}: {exc}"
            x_prev = None
    pf = method != "laplace"
    return ProfileTable(axis=axis, values=values, loglik=out, method=method,
                        n_particles=N if pf else None, seed=seed if pf else None, errors=errors)


# -- stepwise -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class StepwiseResult:
    """Two-factor estimates assembled from separately calibrated submodels."""

    params: dict
    default: object
    performing: object
    latent_default: np.ndarray
    latent_performing: np.ndarray
    residuals: np.ndarray


def residual_correlation(x_d, x_p, a_d, a_p):
    """Sample correlation of the innovations ``x_k - a x_{k-1}`` of two paths."""
    x_d = np.asarray(x_d, dtype=float).reshape(-1)
    x_p = np.asarray(x_p, dtype=float).reshape(-1)
    r = np.stack([x_d[1:] - a_d * x_d[:-1], x_p[1:] - a_p * x_p[:-1]], axis=1)
    if r.shape[0] < 2:
        raise ValueError("need at least three periods to estimate a correlation")
    return float(np.corrcoef(r, rowvar=False)[0, 1]), r


def stepwise_calibrate(series, u=None):
    """Calibrate the two-factor model in three steps.

    1. default-only probit on (defaults, row totals);
    2. ordered probit on the no-default migrations;
    3. correlation of the innovation residuals of the two mode paths.
    """
    step1 = mle_laplace(DEFAULT_ONLY, series, u=u)
    step2 = mle_laplace(PERFORMING, series, u=u)
    a_d, k_d = step1.params["a"], step1.params["k"]
    a_p, k_p = step2.params["a"], step2.params["k"]
    rho, resid = residual_correlation(step1.latent, step2.latent, a_d, a_p)
    params = {"a_d": a_d, "a_p": a_p, "k_d": k_d, "k_p": k_p, "rho": rho}
    return StepwiseResult(params=params, default=step1, performing=step2,
                          latent_default=step1.latent[:, 0],
                          latent_performing=step2.latent[:, 0], residuals=resid)


# -- scenario studies ---------------------------------------------------------

@dataclass(frozen=True)
class StudyConfig:
    """Truth, populations and calibration settings of a scenario study.

    ``family`` is ``"default_only"`` (truth keys ``pd, a, k``) or
    ``"two_factor"`` (truth keys ``pd, nd, a, k, rho`` with ``a`` and ``k``
    pairs ordered default, performing).
    """

    family: str = "two_factor"
    truth: dict = field(default_factory=lambda: {k: v for k, v in TWO_FACTOR_SETUP.items()
                                                 if k != "populations"})
    populations: tuple = tuple(TWO_FACTOR_SETUP["populations"])
    n_periods: int = 150
    n_scenarios: int = 1000
    methods: tuple = ("laplace",)
    renormalize: bool = False
    particles: int = 1000
    grid_count: int = 20
    grid_range: tuple = (0.1, 0.9)

    def __post_init__(self):
        if self.family not in ("default_only", "two_factor"):
            raise ValueError(f"unsupported study family {self.family!r}")
        for m in self.methods:
            if m not in STUDY_METHODS:
                raise ValueError(f"unknown method {m!r}; expected one of {STUDY_METHODS}")
        if "stepwise" in self.methods and self.family != "two_factor":
            raise ValueError("stepwise calibration needs the two-factor family")
        if self.n_scenarios < 1 or self.n_periods < 3:
            raise ValueError("need at least one scenario and three periods")
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "populations", tuple(int(p) for p in self.populations))

    @classmethod
    def default_only(cls, setup=HIGH_DEFAULT, **kw):
        truth = {k: setup[k] for k in ("pd", "a", "k")}
        return cls(family="default_only", truth=truth, populations=tuple(setup["populations"]),
                   **kw)

    def with_truth(self, **changes):
        truth = dict(self.truth)
        truth.update(changes)
        return replace(self, truth=truth)

    def true_params(self):
        t = self.truth
        if self.family == "default_only":
            return default_only_params(t["pd"], t["a"], t["k"])
        return two_factor_params(t["pd"], t["nd"], t["a"], t["k"], t["rho"])

    def param_names(self):
        return ("a", "k") if self.family == "default_only" else ("a_d", "a_p", "k_d", "k_p",
                                                                 "rho")

    def true_vector(self):
        t = self.truth
        if self.family == "default_only":
            return np.array([t["a"], t["k"]], dtype=float)
        return np.array([t["a"][0], t["a"][1], t["k"][0], t["k"][1], t["rho"]], dtype=float)


@dataclass(frozen=True, eq=False)
class StudyResult:
    """Per-scenario estimates (NaN rows for failures) and summary statistics."""

    config: StudyConfig
    names: tuple
    estimates: dict
    failures: dict
    seed: object

    def successes(self, method):
        est = self.estimates[method]
        return est[np.all(np.isfinite(est), axis=1)]

    def mean(self, method):
        return self.successes(method).mean(axis=0)

    def std(self, method):
        ok = self.successes(method)
        if ok.shape[0] < 2:
            warnings.warn("fewer than two successful scenarios; standard deviation reported "
                          "as 0", RuntimeWarning, stacklevel=2)
            return np.zeros(len(self.names))
        return ok.std(axis=0, ddof=1)

    def mean_abs_deviation(self, method, reference):
        a, b = self.estimates[method], self.estimates[reference]
        ok = np.all(np.isfinite(a), axis=1) & np.all(np.isfinite(b), axis=1)
        return np.abs(a[ok] - b[ok]).mean(axis=0)

    def write(self, out_dir):
        """``estimates.csv`` (one row per scenario, method and parameter) and
        ``summary.txt`` (true value, mean and std per parameter and method)."""
        from .domain import ensure_dir

        out = ensure_dir(out_dir)
        with open(out / "estimates.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scenario", "method", "parameter", "value"])
            for method, est in self.estimates.items():
                for i, row in enumerate(est):
                    for name, v in zip(self.names, row):
                        w.writerow([i, method, name, repr(float(v))])
        with open(out / "summary.txt", "w") as fh:
            fh.write(self.summary())
        return out

    def summary(self):
        truth = self.config.true_vector()
        lines = []
        for method in self.estimates:
            n_ok = self.successes(method).shape[0]
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                mean, std = self.mean(method), self.std(method)
            lines.append(f"method: {method}  scenarios: {n_ok} ok, "
                         f"{len(self.failures.get(method, {}))} failed")
            lines.append(f"{'':10s}" + "".join(f"{n:>10s}" for n in self.names))
            lines.append(f"{'true':10s}" + "".join(f"{v:10.4f}" for v in truth))
            lines.append(f"{'average':10s}" + "".join(f"{v:10.4f}" for v in mean))
            lines.append(f"{'std':10s}" + "".join(f"{v:10.4f}" for v in std))
            lines.append("")
        if "stepwise" in self.estimates and "laplace" in self.estimates:
            dev = self.mean_abs_deviation("stepwise", "laplace")
            lines.append("average absolute deviation, stepwise vs joint")
            lines.append(f"{'':10s}" + "".join(f"{v:10.4f}" for v in dev))
            lines.append("")
        return "\n".join(lines)


def _calibrate(method, family, series, config, seed):
    if method == "laplace":
        res = mle_laplace(family, series)
        return [res.params[n] for n in config.param_names()]
    if method == "stepwise":
        res = stepwise_calibrate(series)
        return [res.params[n] for n in config.param_names()]
    lo, hi = config.grid_range
    grid = default_grid(len(config.param_names()), lo, hi, config.grid_count)
    res = pf_gpr_mle(family, series, grid=grid, N=config.particles, rng=seed, workers=1)
    return [res.params[n] for n in config.param_names()]


def run_scenario(task):
    """Simulate one scenario and calibrate it with every configured method."""
    config, seed = task
    sim_seed, cal_seed = seed.spawn(2)
    family = get_family(config.family)
    sc = simulate_migrations(family, config.true_params(), config.populations, config.n_periods,
                             np.random.default_rng(sim_seed), renormalize=config.renormalize)
    out = {}
    for method in config.methods:
        try:
            out[method] = (_calibrate(method, family, sc.series, config, cal_seed), None)
        except _POINT_ERRORS as exc:
            out[method] = (None, f"{type(exc).__name__}: {exc}")
    return out


def scenario_study(config, seed=0, workers=None):
    """Simulate and calibrate ``config.n_scenarios`` scenarios.

    Scenario ``i`` draws from the ``i``-th child of the master seed, so the
    statistics do not depend on the number of workers.
    """
    seeds = seed_sequence(seed).spawn(config.n_scenarios)
    results = map_tasks(run_scenario, [(config, s) for s in seeds], workers)
    p = len(config.param_names())
    estimates, failures = {}, {}
    for method in config.methods:
        est = np.full((config.n_scenarios, p), np.nan)
        fail = {}
        for i, r in enumerate(results):
            values, err = r[method]
            if err is None:
                est[i] = values
            else:
                fail[i] = err
        estimates[method] = est
        failures[method] = fail
    if config.n_scenarios == 1:
        warnings.warn("a single scenario gives no dispersion; standard deviations are 0",
                      RuntimeWarning, stacklevel=2)
    return StudyResult(config=config, names=config.param_names(), estimates=estimates,
                       failures=failures, seed=seed)


__all__ = ["ProfileTable", "likelihood_profile", "StepwiseResult", "stepwise_calibrate",
           "residual_correlation", "StudyConfig", "StudyResult", "scenario_study",
           "run_scenario"]
