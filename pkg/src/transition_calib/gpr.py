"""Gaussian-process regression of noisy log-likelihood surfaces.

The kernel is squared-exponential with per-dimension lengthscales plus a
white-noise term.  On a Cartesian grid the kernel matrix is a Kronecker
product of per-axis matrices; :func:`grid_fit` uses the eigendecompositions
of those small factors instead of factorizing the full matrix.

Targets are centred before fitting (the GP prior has zero mean) and the
mean is added back at prediction.
"""

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize

from ._parallel import map_tasks, seed_sequence
from .errors import CalibrationError, ConditioningError

LOG2PI = np.log(2.0 * np.pi)
MIN_NOISE_VAR = 1e-6
MAX_JITTER = 1e-6
MIN_SUCCESS = 0.9


@dataclass(frozen=True)
class KernelSpec:
    """Squared-exponential kernel ``sigma_f^2 exp(-0.5 sum (dx/l)^2)`` plus noise."""

    sigma_f: float
    lengthscales: tuple
    sigma_noise: float

    def __post_init__(self):
        ls = tuple(float(v) for v in np.atleast_1d(self.lengthscales))
        object.__setattr__(self, "lengthscales", ls)
        if self.sigma_f <= 0 or self.sigma_noise <= 0 or min(ls) <= 0:
            raise ValueError("kernel hyperparameters must be strictly positive")

    @property
    def dim(self):
        return len(self.lengthscales)

    def to_log(self):
        return np.log([self.sigma_f, *self.lengthscales, self.sigma_noise])

    @classmethod
    def from_log(cls, v):
        v = np.exp(np.asarray(v, dtype=float))
        return cls(float(v[0]), tuple(v[1:-1]), float(v[-1]))


def kernel_eval(spec, x, xp):
    """Kernel value between two points (noise excluded)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xp = np.atleast_1d(np.asarray(xp, dtype=float))
    if x.shape != (spec.dim,) or xp.shape != (spec.dim,):
        raise ValueError("point dimension does not match the lengthscales")
    r = (x - xp) / np.asarray(spec.lengthscales)
    return float(spec.sigma_f ** 2 * np.exp(-0.5 * r @ r))


def kernel_matrix(spec, X1, X2):
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    ls = np.asarray(spec.lengthscales)
    A = X1 / ls
    B = X2 / ls
    d2 = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return spec.sigma_f ** 2 * np.exp(-0.5 * np.maximum(d2, 0.0))


def _axis_kernel(x1, x2, ell):
    """Unit-amplitude one-dimensional factor."""
    d = (np.asarray(x1, float)[:, None] - np.asarray(x2, float)[None, :]) / ell
    return np.exp(-0.5 * d * d)


@dataclass(frozen=True, eq=False)
class CartesianGrid:
    """Tensor grid; points are flattened with the last axis varying fastest."""

    axes: tuple

    def __post_init__(self):
        axes = tuple(np.asarray(a, dtype=float).reshape(-1) for a in self.axes)
        for a in axes:
            if a.size < 1 or np.any(np.diff(a) <= 0):
                raise ValueError("grid axes must be non-empty and strictly increasing")
        object.__setattr__(self, "axes", axes)

    @classmethod
    def uniform(cls, lower, upper, counts):
        return cls(tuple(np.linspace(lo, hi, c) for lo, hi, c in zip(lower, upper, counts)))

    @property
    def shape(self):
        return tuple(a.size for a in self.axes)

    @property
    def size(self):
        return int(np.prod(self.shape))

    @property
    def dim(self):
        return len(self.axes)

    def points(self):
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    def flat_index(self, idx):
        """Zero-based flat position of the multi-index ``idx``."""
        return int(np.ravel_multi_index(tuple(idx), self.shape))

    def spacing(self):
        return np.array([np.diff(a).min() if a.size > 1 else np.inf for a in self.axes])


def _kron_mv(mats, v):
    """``(mats[0] kron mats[1] kron ...) @ v`` without forming the product."""
    shape = [m.shape[1] for m in mats]
    T = v.reshape(shape)
    for ax, M in enumerate(mats):
        T = np.moveaxis(np.tensordot(M, T, axes=([1], [ax])), 0, ax)
    return T.reshape(-1)


@dataclass(frozen=True, eq=False)
class TrainedGPR:
    """Fitted GP: training data, hyperparameters and cached factorization."""

    X: np.ndarray
    Y: np.ndarray
    kernel: KernelSpec
    y_mean: float
    alpha: np.ndarray
    log_marginal: float
    jitter: float = 0.0
    grid: Optional[CartesianGrid] = None
    chol: Optional[tuple] = None
    eig: Optional[tuple] = None
    extra: dict = field(default_factory=dict)


# -- dense --------------------------------------------------------------------

def _dense_factor(K, noise_var):
    n = K.shape[0]
    jitter = 0.0
    while True:
        try:
            c = cho_factor(K + (noise_var + jitter) * np.eye(n), lower=True)
            return c, jitter
        except np.linalg.LinAlgError:
            jitter = 1e-10 if jitter == 0.0 else jitter * 10.0
            if jitter > MAX_JITTER:
                raise ConditioningError("kernel matrix is not positive definite even "
                                        f"with jitter {MAX_JITTER}") from None


def dense_log_marginal(spec, X, y, grad=False):
    """Log marginal likelihood of centred targets ``y`` (dense factorization).

    With ``grad`` also returns the gradient in
    ``(log sigma_f, log lengthscales..., log sigma_noise)``.
    """
    X = np.atleast_2d(X)
    K = kernel_matrix(spec, X, X)
    c, _ = _dense_factor(K, spec.sigma_noise ** 2)
    a = cho_solve(c, y)
    lml = float(-0.5 * y @ a - np.log(np.diag(c[0])).sum() - 0.5 * y.size * LOG2PI)
    if not grad:
        return lml
    W = np.outer(a, a) - cho_solve(c, np.eye(y.size))
    g = np.empty(spec.dim + 2)
    g[0] = np.sum(W * K)
    for m, ell in enumerate(spec.lengthscales):
        D = (X[:, m, None] - X[None, :, m]) / ell
        g[1 + m] = 0.5 * np.sum(W * K * D * D)
    g[-1] = spec.sigma_noise ** 2 * np.trace(W)
    return lml, g


def _initial_spec(X, y, spec0):
    if spec0 is not None:
        return spec0
    span = np.ptp(X, axis=0)
    span = np.where(span > 0, span, 1.0)
    sd = float(np.std(y)) or 1.0
    return KernelSpec(sd, tuple(0.3 * span), max(0.01 * sd, np.sqrt(MIN_NOISE_VAR)))


def _bounds(X, y):
    span = np.ptp(X, axis=0)
    span = np.where(span > 0, span, 1.0)
    sd = float(np.std(y)) or 1.0
    lo = [np.log(1e-3 * sd)] + list(np.log(1e-2 * span)) + [0.5 * np.log(MIN_NOISE_VAR)]
    hi = [np.log(1e3 * sd)] + list(np.log(1e2 * span)) + [np.log(10.0 * sd)]
    return list(zip(lo, hi))


def _optimize(lml_grad, spec0, X, y):
    """Maximize the marginal likelihood from ``spec0`` and a few lengthscale restarts."""
    bounds = _bounds(X, y)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])

    def neg(v):
        try:
            f, g = lml_grad(KernelSpec.from_log(v))
        except ConditioningError:
            return np.inf, np.zeros_like(v)
        if not np.isfinite(f):
            return np.inf, np.zeros_like(v)
        return -f, -g

    base = np.clip(spec0.to_log(), lo, hi)
    starts = [base]
    for scale in (0.5, 2.0, 5.0):
        v = base.copy()
        v[1:-1] += np.log(scale)
        starts.append(np.clip(v, lo, hi))
    best_x, best_f = base, neg(base)[0]
    for x0 in starts:
        res = minimize(neg, x0, jac=True, method="L-BFGS-B", bounds=bounds)
        if np.isfinite(res.fun) and res.fun < best_f:
            best_x, best_f = res.x, res.fun
    return KernelSpec.from_log(best_x)


def gpr_fit(X, Y, spec0=None, optimize=True):
    """Fit a GP on free inputs; hyperparameters by marginal likelihood.

    Parameters
    ----------
    X : array (n, d)
    Y : array (n,)
    spec0 : KernelSpec, optional
        Starting (or fixed, if ``optimize`` is false) hyperparameters.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float).reshape(-1)
    if X.shape[0] != Y.size or Y.size < 1:
        raise ValueError("X and Y must hold the same positive number of points")
    y_mean = float(Y.mean())
    y = Y - y_mean
    spec = _initial_spec(X, y, spec0)
    if optimize and Y.size >= 2:
        spec = _optimize(lambda sp: dense_log_marginal(sp, X, y, grad=True), spec, X, y)
    K = kernel_matrix(spec, X, X)
    c, jitter = _dense_factor(K, spec.sigma_noise ** 2)
    alpha = cho_solve(c, y)
    lml = float(-0.5 * y @ alpha - np.log(np.diag(c[0])).sum() - 0.5 * y.size * LOG2PI)
    return TrainedGPR(X=X, Y=Y, kernel=spec, y_mean=y_mean, alpha=alpha, log_marginal=lml,
                      jitter=jitter, chol=c)


# -- Kronecker grid -----------------------------------------------------------

def _grid_eig(grid, spec):
    vals, vecs = [], []
    for a, ell in zip(grid.axes, spec.lengthscales):
        w, V = np.linalg.eigh(_axis_kernel(a, a, ell))
        vals.append(np.clip(w, 0.0, None))
        vecs.append(V)
    lam = spec.sigma_f ** 2 * _kron_diag(vals)
    return lam, vecs


def _kron_diag(vals):
    out = np.ones(1)
    for w in vals:
        out = np.multiply.outer(out, w).reshape(-1)
    return out


def grid_log_marginal(grid, spec, y, grad=False):
    """Log marginal likelihood on a grid via the Kronecker eigendecomposition."""
    vals, vecs = [], []
    for a, ell in zip(grid.axes, spec.lengthscales):
        w, V = np.linalg.eigh(_axis_kernel(a, a, ell))
        vals.append(np.clip(w, 0.0, None))
        vecs.append(V)
    sf2, sn2 = spec.sigma_f ** 2, spec.sigma_noise ** 2
    lam = sf2 * _kron_diag(vals)
    s = lam + sn2
    z = _kron_mv([V.T for V in vecs], y)
    lml = float(-0.5 * np.sum(z * z / s) - 0.5 * np.log(s).sum() - 0.5 * y.size * LOG2PI)
    if not grad:
        return lml
    alpha = _kron_mv(vecs, z / s)
    mats = [V * w @ V.T for V, w in zip(vecs, vals)]
    g = np.empty(spec.dim + 2)
    g[0] = alpha @ (2.0 * sf2 * _kron_mv(mats, alpha)) - np.sum(2.0 * lam / s)
    for m, (a, ell) in enumerate(zip(grid.axes, spec.lengthscales)):
        D = (a[:, None] - a[None, :]) / ell
        dK = _axis_kernel(a, a, ell) * D * D
        dmats = list(mats)
        dmats[m] = dK
        diag = list(vals)
        diag[m] = np.einsum("ij,ik,kj->j", vecs[m], dK, vecs[m])
        g[1 + m] = alpha @ (sf2 * _kron_mv(dmats, alpha)) - np.sum(sf2 * _kron_diag(diag) / s)
    g[-1] = 2.0 * sn2 * (alpha @ alpha - np.sum(1.0 / s))
    g[0] *= 0.5
    g[1:] *= 0.5
    return lml, g


def grid_fit(grid, Y, spec=None, optimize=False):
    """Fit a GP whose inputs are the points of ``grid`` (flattened C-order)."""
    Y = np.asarray(Y, dtype=float).reshape(-1)
    if Y.size != grid.size:
        raise ValueError(f"expected {grid.size} targets for the grid, got {Y.size}")
    X = grid.points()
    y_mean = float(Y.mean())
    y = Y - y_mean
    spec = _initial_spec(X, y, spec)
    if optimize and Y.size >= 2:
        spec = _optimize(lambda sp: grid_log_marginal(grid, sp, y, grad=True), spec, X, y)
    lam, vecs = _grid_eig(grid, spec)
    s = lam + spec.sigma_noise ** 2
    z = _kron_mv([V.T for V in vecs], y)
    alpha = _kron_mv(vecs, z / s)
    lml = float(-0.5 * np.sum(z * z / s) - 0.5 * np.log(s).sum() - 0.5 * y.size * LOG2PI)
    return TrainedGPR(X=X, Y=Y, kernel=spec, y_mean=y_mean, alpha=alpha, log_marginal=lml,
                      grid=grid, eig=(lam, vecs))


# -- prediction ---------------------------------------------------------------

def gpr_predict(model, Xstar, return_var=True, chunk=2048):
    """Predictive mean and variance at the rows of ``Xstar``."""
    Xs = np.atleast_2d(np.asarray(Xstar, dtype=float))
    spec = model.kernel
    if model.grid is not None:
        grid = model.grid
        M = [_axis_kernel(Xs[:, m], grid.axes[m], spec.lengthscales[m])
             for m in range(grid.dim)]
        T = model.alpha.reshape(grid.shape)
        T = np.tensordot(M[0], T, axes=([1], [0]))
        for m in range(1, grid.dim):
            T = np.einsum("qi,qi...->q...", M[m], T)
        mean = spec.sigma_f ** 2 * T + model.y_mean
        if not return_var:
            return mean
        lam, vecs = model.eig
        s = lam + spec.sigma_noise ** 2
        var = np.empty(Xs.shape[0])
        P = [Mm @ V for Mm, V in zip(M, vecs)]
        for lo in range(0, Xs.shape[0], chunk):
            hi = min(lo + chunk, Xs.shape[0])
            proj = np.ones((hi - lo, 1))
            for Pm in P:
                proj = (proj[:, :, None] * Pm[lo:hi, None, :]).reshape(hi - lo, -1)
            proj *= spec.sigma_f ** 2
            var[lo:hi] = spec.sigma_f ** 2 - np.sum(proj * proj / s, axis=1)
        return mean, _clamp_var(var)
    Ks = kernel_matrix(spec, Xs, model.X)
    mean = Ks @ model.alpha + model.y_mean
    if not return_var:
        return mean
    v = cho_solve(model.chol, Ks.T)
    var = spec.sigma_f ** 2 - np.sum(Ks * v.T, axis=1)
    return mean, _clamp_var(var)


def _clamp_var(var):
    if np.any(var < -1e-10 * max(1.0, np.max(np.abs(var)))):
        raise ConditioningError("negative predictive variance beyond rounding")
    return np.maximum(var, 0.0)


def predict_lattice(model, axes):
    """Predictive mean on the tensor lattice ``axes`` (grid models), C-order."""
    spec = model.kernel
    if model.grid is None:
        pts = CartesianGrid(axes).points()
        return gpr_predict(model, pts, return_var=False)
    M = [_axis_kernel(a, g, ell) for a, g, ell in zip(axes, model.grid.axes, spec.lengthscales)]
    return spec.sigma_f ** 2 * _kron_mv(M, model.alpha) + model.y_mean


def argmax_mean(model, lower, upper, refine=20):
    """Maximize the predictive mean: lattice search, then bounded simplex polish.

    The lattice has ``refine`` times as many points per axis as the training
    grid (or 20 per axis for free inputs).
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    counts = [refine * a.size for a in model.grid.axes] if model.grid is not None \
        else [refine * 20] * lower.size
    axes = tuple(np.linspace(lo, hi, c) for lo, hi, c in zip(lower, upper, counts))
    values = predict_lattice(model, axes)
    best = np.unravel_index(int(np.argmax(values)), tuple(counts))
    x0 = np.array([a[i] for a, i in zip(axes, best)])
    res = minimize(lambda v: -float(gpr_predict(model, v[None, :], return_var=False)[0]),
                   x0, method="Nelder-Mead", bounds=list(zip(lower, upper)),
                   options={"xatol": 1e-6, "fatol": 1e-9})
    x = np.clip(res.x, lower, upper)
    fx = float(gpr_predict(model, x[None, :], return_var=False)[0])
    if fx < values.max():
        return x0, float(values.max())
    return x, fx


# -- likelihood surface -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LikelihoodSurface:
    """Grid of parameter points with PF log-likelihoods and the GP fit."""

    names: tuple
    grid: CartesianGrid
    loglik: np.ndarray
    ok: np.ndarray
    model: TrainedGPR
    fitted: np.ndarray

    def write(self, path):
        pts = self.grid.points()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([*self.names, "loglik", "fitted_loglik"])
            for p, ll, ok, f in zip(pts, self.loglik, self.ok, self.fitted):
                w.writerow([*(repr(float(v)) for v in p), repr(float(ll)) if ok else "nan",
                            repr(float(f))])

    def cross_section(self, axis, value, count=200):
        """Fitted mean and standard deviation along ``axis`` with the others fixed.

        ``value`` fixes the remaining coordinates (sequence in axis order,
        the entry at ``axis`` ignored).  Returns ``(t, mean, sd)``.
        """
        value = np.asarray(value, dtype=float)
        a = self.grid.axes[axis]
        t = np.linspace(a[0], a[-1], count)
        pts = np.tile(value, (count, 1))
        pts[:, axis] = t
        mean, var = gpr_predict(self.model, pts)
        return t, mean, np.sqrt(var)


# -- particle filter + GPR MLE ------------------------------------------------

@dataclass(frozen=True, eq=False)
class PFGPRResult:
    """Estimate from the GPR mean fitted to particle-filter log-likelihoods."""

    psi_hat: object
    params: dict
    vector: np.ndarray
    fitted_max: float
    surface: LikelihoodSurface
    failed: list
    n_particles: int


def default_grid(dim=2, lower=0.1, upper=0.9, count=20):
    return CartesianGrid.uniform([lower] * dim, [upper] * dim, [count] * dim)


_PF_ERRORS = (CalibrationError, np.linalg.LinAlgError, FloatingPointError)


def _grid_row(task):
    """PF log-likelihoods along one grid row, warm-starting the mode search."""
    family, series, u, pmap, points, seeds, N = task
    from .models import get_family
    from .particle import pf_importance

    fam = get_family(family)
    data = fam.prepare(series)
    out = []
    x_prev = None
    for vec, ss in zip(points, seeds):
        try:
            res = pf_importance(fam, series, pmap.build(vec), u=u, N=N,
                                rng=np.random.default_rng(ss), data=data, x_init=x_prev)
        except _PF_ERRORS as exc:
            out.append((np.nan, f"{type(exc).__name__}: {exc}"))
            x_prev = None
            continue
        x_prev = res.mode.x_mode
        ok = np.isfinite(res.loglik)
        out.append((res.loglik if ok else np.nan, None if ok else "non-finite estimate"))
    return out


def pf_gpr_mle(family, series, u=None, grid=None, N=1000, rng=None, pmap=None, workers=None):
    """Maximum likelihood via a GP fitted to PF-IS log-likelihoods on a grid.

    Parameters
    ----------
    grid : CartesianGrid, optional
        Points in the free-parameter space of ``pmap``; default 20 evenly
        spaced values per parameter on [0.1, 0.9].
    rng : int, SeedSequence or Generator
        Master seed; each grid point gets its own spawned stream so the
        result does not depend on ``workers``.

    Raises
    ------
    CalibrationError
        If fewer than 90% of the grid points give a finite estimate.
    """
    from .models import get_family
    from .params import default_map

    family = get_family(family)
    if pmap is None:
        pmap = default_map(family, series)
    if grid is None:
        grid = default_grid(len(pmap.names))
    if grid.dim != len(pmap.names):
        raise ValueError(f"grid has {grid.dim} axes but the map has {len(pmap.names)} parameters")
    pts = grid.points()
    seeds = seed_sequence(rng).spawn(grid.size)
    row = grid.shape[-1]
    tasks = [(family, series, u, pmap, pts[i:i + row], seeds[i:i + row], N)
             for i in range(0, grid.size, row)]
    results = [r for chunk in map_tasks(_grid_row, tasks, workers) for r in chunk]
    loglik = np.array([r[0] for r in results])
    ok = np.isfinite(loglik)
    failed = [(i, r[1]) for i, r in enumerate(results) if r[1] is not None]
    if ok.mean() < MIN_SUCCESS:
        raise CalibrationError(f"only {int(ok.sum())} of {grid.size} grid points gave a "
                               f"likelihood estimate; first failure: {failed[0][1]}")
    if ok.all():
        model = grid_fit(grid, loglik, optimize=True)
    else:
        model = gpr_fit(pts[ok], loglik[ok])
    lower = np.array([a[0] for a in grid.axes])
    upper = np.array([a[-1] for a in grid.axes])
    vec, fmax = argmax_mean(model, lower, upper)
    fitted = gpr_predict(model, pts, return_var=False)
    surface = LikelihoodSurface(names=tuple(pmap.names), grid=grid, loglik=loglik, ok=ok,
                                model=model, fitted=fitted)
    return PFGPRResult(psi_hat=pmap.build(vec), params=pmap.as_dict(vec), vector=vec,
                       fitted_max=fmax, surface=surface, failed=failed, n_particles=N)
