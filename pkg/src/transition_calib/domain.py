"""Core value types: rating schemes, migration counts, parameters, paths.

Migration counts are stored as an ``(n, R-1, R)`` integer array: period,
performing row, destination column.  The default rating is the last label
and is absorbing, so its row is never stored.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_discrete_lyapunov

from .errors import DimensionError, StationarityError


@dataclass(frozen=True)
class RatingScheme:
    """Ordered rating labels; the last one is default."""

    labels: tuple

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(str(x) for x in self.labels))
        if len(self.labels) < 2:
            raise ValueError("a rating scheme needs at least two ratings")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("rating labels must be unique")

    @property
    def R(self):
        return len(self.labels)

    @property
    def performing(self):
        return self.labels[:-1]

    @classmethod
    def default(cls, R):
        return cls(tuple(f"P{i + 1}" for i in range(R - 1)) + ("D",))


@dataclass(frozen=True, eq=False)
class MigrationSeries:
    """Observed migration counts ``m[k, i, j]`` with row totals ``N[k, i]``.

    No validation happens at construction; use :func:`validate_series`.
    """

    counts: np.ndarray
    row_totals: Optional[np.ndarray] = None

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 3:
            raise DimensionError("counts must have shape (n, R-1, R)")
        object.__setattr__(self, "counts", counts)
        if self.row_totals is None:
            object.__setattr__(self, "row_totals", counts.sum(axis=2))
        else:
            object.__setattr__(self, "row_totals", np.asarray(self.row_totals))

    @property
    def n(self):
        return self.counts.shape[0]

    @property
    def R(self):
        return self.counts.shape[2]

    @property
    def defaults(self):
        return self.counts[:, :, -1]

    def slice(self, start, stop=None):
        return MigrationSeries(self.counts[start:stop], self.row_totals[start:stop])

    def default_rates(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.defaults / self.row_totals


def validate_series(series, scheme):
    """Return a list of violations; an empty list means the series is valid."""
    problems = []
    counts = series.counts
    if counts.shape[1:] != (scheme.R - 1, scheme.R):
        problems.append(
            f"dimension mismatch: counts have shape {counts.shape[1:]}, "
            f"expected {(scheme.R - 1, scheme.R)}")
        return problems
    if not np.issubdtype(counts.dtype, np.integer):
        bad = np.argwhere(counts != np.round(counts))
        for k, i, j in bad[:20]:
            problems.append(f"non-integer count at ({i + 1},{j + 1},{k + 1})")
    for k, i, j in np.argwhere(counts < 0)[:20]:
        problems.append(f"negative count at ({i + 1},{j + 1},{k + 1})")
    totals = series.row_totals
    if totals.shape != counts.shape[:2]:
        problems.append("dimension mismatch: row totals do not match counts")
        return problems
    for k, i in np.argwhere(counts.sum(axis=2) != totals)[:20]:
        problems.append(
            f"row-total mismatch at row {i + 1}, period {k + 1}: stored "
            f"{totals[k, i]}, counts sum to {counts[k, i].sum()}")
    return problems


def _diag_of(A):
    A = np.atleast_1d(np.asarray(A, dtype=float))
    if A.ndim == 2:
        if not np.allclose(A, np.diag(np.diag(A))):
            raise ValueError("AR matrix must be diagonal")
        A = np.diag(A)
    return A


def stationary_innovation_cov(A, rho=0.0):
    """Innovation covariance giving unit stationary variance per component.

    ``Q = D C D`` with ``D = diag(sqrt(1 - a_m**2))`` and ``C`` the
    equicorrelation matrix with off-diagonal ``rho``.
    """
    a = _diag_of(A)
    if np.any(np.abs(a) >= 1.0):
        raise StationarityError(f"AR coefficients must lie in (-1, 1), got {a}")
    D = np.sqrt(1.0 - a ** 2)
    C = np.full((a.size, a.size), float(rho))
    np.fill_diagonal(C, 1.0)
    return D[:, None] * C * D[None, :]


def stationary_covariance(A, Q):
    """Solve ``P = A P A' + Q``."""
    return solve_discrete_lyapunov(np.asarray(A, float), np.asarray(Q, float))


@dataclass(frozen=True, eq=False)
class ModelParameters:
    """Parameter set psi of the latent-factor transition model.

    Layout of ``d`` and ``K`` depends on the response family (see
    :mod:`transition_calib.models`).  ``a0``/``P0`` default to the
    stationary law of the AR(1) factor.
    """

    d: np.ndarray
    K: np.ndarray
    A: np.ndarray
    Q: np.ndarray
    L: Optional[np.ndarray] = None
    rho: Optional[float] = None
    a0: Optional[np.ndarray] = None
    P0: Optional[np.ndarray] = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        s = A.shape[0]
        if A.shape != (s, s) or Q.shape != (s, s):
            raise DimensionError("A and Q must be square with matching size")
        if np.max(np.abs(np.linalg.eigvals(A))) >= 1.0:
            raise StationarityError("spectral radius of A must be < 1")
        if not np.allclose(Q, Q.T, atol=1e-12):
            raise ValueError("Q must be symmetric")
        if np.min(np.linalg.eigvalsh(Q)) < -1e-12:
            raise ValueError("Q must be positive semi-definite")
        if self.rho is not None and not -1.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (-1, 1)")
        a0 = np.zeros(s) if self.a0 is None else np.asarray(self.a0, float).reshape(s)
        P0 = (stationary_covariance(A, Q) if self.P0 is None
              else np.atleast_2d(np.asarray(self.P0, float)))
        if P0.shape != (s, s):
            raise DimensionError("P0 must be s x s")
        setter = object.__setattr__
        setter(self, "A", A)
        setter(self, "Q", Q)
        setter(self, "a0", a0)
        setter(self, "P0", 0.5 * (P0 + P0.T))
        setter(self, "d", np.asarray(self.d, dtype=float))
        setter(self, "K", np.asarray(self.K, dtype=float))
        if self.L is not None:
            setter(self, "L", np.asarray(self.L, dtype=float))

    @property
    def s(self):
        return self.A.shape[0]

    @classmethod
    def unit_variance(cls, d, K, A, rho=0.0, L=None):
        """Diagonal AR factor with Q chosen for unit stationary variance."""
        a = _diag_of(A)
        Q = stationary_innovation_cov(a, rho)
        return cls(d=d, K=K, A=np.diag(a), Q=Q, L=L,
                   rho=float(rho) if a.size > 1 else None)


@dataclass(frozen=True, eq=False)
class SignalPath:
    """Signals theta for every period; layout set by the response family."""

    theta: np.ndarray
    family: str = ""

    @property
    def n(self):
        return self.theta.shape[0]


@dataclass(frozen=True, eq=False)
class LatentPath:
    """Latent factor path ``x[k]`` (``(n, s)``), with optional innovations."""

    x: np.ndarray
    eta: Optional[np.ndarray] = None
    x0: Optional[np.ndarray] = None

    @property
    def n(self):
        return self.x.shape[0]

    def recursion_residual(self, A):
        """Max |x_k - A x_{k-1} - eta_k|; needs ``eta`` and ``x0``."""
        if self.eta is None or self.x0 is None:
            raise ValueError("innovations and initial state are not stored")
        prev = np.vstack([self.x0[None, :], self.x[:-1]])
        return float(np.max(np.abs(self.x - prev @ np.asarray(A).T - self.eta)))


@dataclass(frozen=True, eq=False)
class ObservedFactors:
    """Observed macro factors ``u[k]`` with shape ``(n, l)``."""

    u: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        if u.ndim == 1:
            u = u[:, None]
        object.__setattr__(self, "u", u)

    @property
    def n(self):
        return self.u.shape[0]

    @classmethod
    def zeros(cls, n, l=1):
        return cls(np.zeros((n, l)))


# -- flat files -------------------------------------------------------------

MIGRATION_HEADER = ["period", "from", "to", "count"]
FACTOR_HEADER = ["period", "factor_index", "value"]


def write_migrations(path, series, scheme):
    """Write ``period,from,to,count`` records, every cell including zeros."""
    labels = scheme.labels
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MIGRATION_HEADER)
        for k in range(series.n):
            for i in range(scheme.R - 1):
                for j in range(scheme.R):
                    w.writerow([k + 1, labels[i], labels[j], int(series.counts[k, i, j])])


def read_migrations(path, scheme: Optional[RatingScheme] = None):
    """Read a migration-count file.

    Without ``scheme``, rating order is taken from the first appearance of
    each label in the ``to`` column; the last label is default.

    Returns
    -------
    (MigrationSeries, RatingScheme)
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != MIGRATION_HEADER:
            raise ValueError(f"{path}: expected header {','.join(MIGRATION_HEADER)}")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 fields")
            try:
                rows.append((int(rec[0]), rec[1].strip(), rec[2].strip(), int(rec[3])))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: period and count must be integers") from None
    if not rows:
        raise ValueError(f"{path}: no records")
    if scheme is None:
        order = []
        for _, _, to, _ in rows:
            if to not in order:
                order.append(to)
        scheme = RatingScheme(tuple(order))
    pos = {lab: i for i, lab in enumerate(scheme.labels)}
    n = max(r[0] for r in rows)
    counts = np.zeros((n, scheme.R - 1, scheme.R), dtype=np.int64)
    for k, fr, to, cnt in rows:
        if fr not in pos or to not in pos:
            raise ValueError(f"{path}: unknown rating label in record {(k, fr, to)}")
        if pos[fr] == scheme.R - 1:
            raise ValueError(f"{path}: transitions out of default are not modelled")
        if k < 1:
            raise ValueError(f"{path}: periods are 1-based")
        counts[k - 1, pos[fr], pos[to]] = cnt
    return MigrationSeries(counts), scheme


def write_factors(path, factors):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FACTOR_HEADER)
        for k in range(factors.n):
            for j in range(factors.u.shape[1]):
                w.writerow([k + 1, j + 1, repr(float(factors.u[k, j]))])


def read_factors(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != FACTOR_HEADER:
            raise ValueError(f"{path}: expected header {','.join(FACTOR_HEADER)}")
        recs = [(int(r[0]), int(r[1]), float(r[2])) for r in reader if r]
    n = max(r[0] for r in recs)
    l = max(r[1] for r in recs)
    u = np.zeros((n, l))
    for k, j, v in recs:
        u[k - 1, j - 1] = v
    return ObservedFactors(u)


def as_factors(u, n):
    """Normalize ``None``/array/ObservedFactors to an ``(n, l)`` array or None."""
    if u is None:
        return None
    if isinstance(u, ObservedFactors):
        u = u.u
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    if u.shape[0] != n:
        raise DimensionError(f"observed factors have {u.shape[0]} periods, expected {n}")
    return u


def ensure_dir(path):
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def labels_or_default(labels: Optional[Sequence[str]], R: int):
    return RatingScheme(tuple(labels)) if labels else RatingScheme.default(R)
