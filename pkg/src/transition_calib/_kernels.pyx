# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: Kalman filter, RTS smoother, probit likelihood terms.

The matrices handled here are tiny (state dimension 1-3, a handful of
observation components per period) and the recursions are sequential in
time, so the cost of a pure numpy implementation is dominated by call
overhead.  These kernels run the same arithmetic on raw buffers.

Signatures and results must stay identical to ``_kernels_py``.
"""

import numpy as np

from libc.math cimport erfc, exp, isinf, log, log1p, sqrt, M_PI, M_SQRT1_2
from libc.stdlib cimport malloc, free
from scipy.special.cython_special cimport log_ndtr as _sp_log_ndtr

from .errors import ConditioningError

cdef double LOG2PI = log(2.0 * M_PI)
cdef double LOG_SQRT_2PI = 0.5 * log(2.0 * M_PI)


cdef inline double ndtr(double t) noexcept nogil:
    return 0.5 * erfc(-t * M_SQRT1_2)


cdef inline double log_ndtr(double t) noexcept nogil:
    if t > 0.0:
        return log1p(-ndtr(-t))
    if t > -20.0:
        return log(ndtr(t))
    return _sp_log_ndtr(t)


cdef inline void _log_both_tails(double t, double* lp, double* lq) noexcept nogil:
    """lp = log Phi(t), lq = log Phi(-t) from one evaluation of the smaller tail."""
    cdef double q
    if t < 0.0:
        if t > -20.0:
            q = ndtr(t)
            lp[0] = log(q)
            lq[0] = log1p(-q)
        else:
            lp[0] = _sp_log_ndtr(t)
            lq[0] = -exp(lp[0])
    else:
        if t < 20.0:
            q = ndtr(-t)
            lq[0] = log(q)
            lp[0] = log1p(-q)
        else:
            lq[0] = _sp_log_ndtr(-t)
            lp[0] = -exp(lq[0])

cdef int _chol(double* a, int n) noexcept nogil:
    """In-place lower Cholesky of a row-major n x n matrix; -1 if not PD."""
    cdef int i, j, k
    cdef double s, t
    for j in range(n):
        s = a[j * n + j]
        for k in range(j):
            s -= a[j * n + k] * a[j * n + k]
        if not (s > 0.0):
            return -1
        s = sqrt(s)
        a[j * n + j] = s
        for i in range(j + 1, n):
            t = a[i * n + j]
            for k in range(j):
                t -= a[i * n + k] * a[j * n + k]
            a[i * n + j] = t / s
        for i in range(j):
            a[i * n + j] = 0.0
    return 0


cdef void _chol_solve(double* L, int n, double* b, int m) noexcept nogil:
    """Solve (L L^T) X = B in place; B is row-major n x m."""
    cdef int i, k, col
    cdef double s
    for col in range(m):
        for i in range(n):
            s = b[i * m + col]
            for k in range(i):
                s -= L[i * n + k] * b[k * m + col]
            b[i * m + col] = s / L[i * n + i]
        for i in range(n - 1, -1, -1):
            s = b[i * m + col]
            for k in range(i + 1, n):
                s -= L[k * n + i] * b[k * m + col]
            b[i * m + col] = s / L[i * n + i]


def kalman_filter_core(const double[:, ::1] y, const double[:, ::1] c,
                       const double[:, :, ::1] Z, const double[:, :, ::1] H,
                       const unsigned char[:, ::1] mask,
                       const double[:, :, ::1] A, const double[:, :, ::1] Q,
                       const double[::1] a0, const double[:, ::1] P0):
    cdef Py_ssize_t n = y.shape[0]
    cdef int p = <int>y.shape[1]
    cdef int s = <int>a0.shape[0]
    cdef int k, i, j, l, a, b, q, r
    cdef double acc, logdet, quad

    x_pred_a = np.empty((n, s))
    P_pred_a = np.empty((n, s, s))
    x_filt_a = np.empty((n, s))
    P_filt_a = np.empty((n, s, s))
    ll_a = np.zeros(n)
    cdef double[:, ::1] x_pred = x_pred_a
    cdef double[:, :, ::1] P_pred = P_pred_a
    cdef double[:, ::1] x_filt = x_filt_a
    cdef double[:, :, ::1] P_filt = P_filt_a
    cdef double[::1] ll = ll_a

    cdef double* xf = <double*>malloc(s * sizeof(double))
    cdef double* xp = <double*>malloc(s * sizeof(double))
    cdef double* Pf = <double*>malloc(s * s * sizeof(double))
    cdef double* Pp = <double*>malloc(s * s * sizeof(double))
    cdef double* tmp = <double*>malloc(s * s * sizeof(double))
    cdef int* idx = <int*>malloc((p if p > 0 else 1) * sizeof(int))
    cdef double* v = <double*>malloc((p if p > 0 else 1) * sizeof(double))
    cdef double* w = <double*>malloc((p if p > 0 else 1) * sizeof(double))
    cdef double* F = <double*>malloc((p if p > 0 else 1) * s * sizeof(double))
    cdef double* SF = <double*>malloc((p if p > 0 else 1) * s * sizeof(double))
    cdef double* S = <double*>malloc((p * p if p > 0 else 1) * sizeof(double))
    cdef int failed = -1

    try:
        for i in range(s):
            xf[i] = a0[i]
            for j in range(s):
                Pf[i * s + j] = P0[i, j]

        for k in range(n):
            # prediction
            for i in range(s):
                acc = 0.0
                for j in range(s):
                    acc += A[k, i, j] * xf[j]
                xp[i] = acc
            for i in range(s):
                for j in range(s):
                    acc = 0.0
                    for l in range(s):
                        acc += A[k, i, l] * Pf[l * s + j]
                    tmp[i * s + j] = acc
            for i in range(s):
                for j in range(s):
                    acc = Q[k, i, j]
                    for l in range(s):
                        acc += tmp[i * s + l] * A[k, j, l]
                    Pp[i * s + j] = acc
            for i in range(s):
                for j in range(i):
                    acc = 0.5 * (Pp[i * s + j] + Pp[j * s + i])
                    Pp[i * s + j] = acc
                    Pp[j * s + i] = acc
            for i in range(s):
                x_pred[k, i] = xp[i]
                for j in range(s):
                    P_pred[k, i, j] = Pp[i * s + j]

            q = 0
            for r in range(p):
                if mask[k, r]:
                    idx[q] = r
                    q += 1

            if q == 0:
                for i in range(s):
                    xf[i] = xp[i]
                    for j in range(s):
                        Pf[i * s + j] = Pp[i * s + j]
            else:
                for a in range(q):
                    r = idx[a]
                    acc = y[k, r] - c[k, r]
                    for j in range(s):
                        acc -= Z[k, r, j] * xp[j]
                    v[a] = acc
                    w[a] = acc
                    for j in range(s):
                        acc = 0.0
                        for l in range(s):
                            acc += Z[k, r, l] * Pp[l * s + j]
                        F[a * s + j] = acc
                        SF[a * s + j] = acc
                for a in range(q):
                    for b in range(q):
                        acc = H[k, idx[a], idx[b]]
                        for j in range(s):
                            acc += F[a * s + j] * Z[k, idx[b], j]
                        S[a * q + b] = acc
                for a in range(q):
                    for b in range(a):
                        acc = 0.5 * (S[a * q + b] + S[b * q + a])
                        S[a * q + b] = acc
                        S[b * q + a] = acc
                if _chol(S, q) != 0:
                    failed = k
                    break
                logdet = 0.0
                for a in range(q):
                    logdet += 2.0 * log(S[a * q + a])
                _chol_solve(S, q, w, 1)
                _chol_solve(S, q, SF, s)
                quad = 0.0
                for a in range(q):
                    quad += v[a] * w[a]
                for i in range(s):
                    acc = xp[i]
                    for a in range(q):
                        acc += F[a * s + i] * w[a]
                    xf[i] = acc
                for i in range(s):
                    for j in range(s):
                        acc = Pp[i * s + j]
                        for a in range(q):
                            acc -= F[a * s + i] * SF[a * s + j]
                        Pf[i * s + j] = acc
                for i in range(s):
                    for j in range(i):
                        acc = 0.5 * (Pf[i * s + j] + Pf[j * s + i])
                        Pf[i * s + j] = acc
                        Pf[j * s + i] = acc
                ll[k] = -0.5 * (q * LOG2PI + logdet + quad)

            for i in range(s):
                x_filt[k, i] = xf[i]
                for j in range(s):
                    P_filt[k, i, j] = Pf[i * s + j]
    finally:
        free(xf); free(xp); free(Pf); free(Pp); free(tmp)
        free(idx); free(v); free(w); free(F); free(SF); free(S)

    if failed >= 0:
        raise ConditioningError(
            f"innovation covariance not positive definite at period {failed}",
            period=failed)
    return x_pred_a, P_pred_a, x_filt_a, P_filt_a, ll_a


def rts_smoother_core(const double[:, :, ::1] A, const double[:, ::1] x_pred,
                      const double[:, :, ::1] P_pred,
                      const double[:, ::1] x_filt,
                      const double[:, :, ::1] P_filt):
    cdef Py_ssize_t n = x_filt.shape[0]
    cdef int s = <int>x_filt.shape[1]
    cdef Py_ssize_t k
    cdef int i, j, l
    cdef double acc

    x_s_a = np.array(x_filt, copy=True)
    P_s_a = np.array(P_filt, copy=True)
    cdef double[:, ::1] xs = x_s_a
    cdef double[:, :, ::1] Ps = P_s_a

    cdef double* L = <double*>malloc(s * s * sizeof(double))
    cdef double* JT = <double*>malloc(s * s * sizeof(double))
    cdef double* D = <double*>malloc(s * s * sizeof(double))
    cdef double* T = <double*>malloc(s * s * sizeof(double))
    cdef double* dx = <double*>malloc(s * sizeof(double))
    cdef Py_ssize_t failed = -1

    try:
        for k in range(n - 2, -1, -1):
            for i in range(s):
                for j in range(s):
                    L[i * s + j] = P_pred[k + 1, i, j]
                    acc = 0.0
                    for l in range(s):
                        acc += A[k + 1, i, l] * P_filt[k, l, j]
                    JT[i * s + j] = acc
            if _chol(L, s) != 0:
                failed = k + 1
                break
            # JT <- P_pred^{-1} A P_filt, so J = JT^T
            _chol_solve(L, s, JT, s)
            for i in range(s):
                dx[i] = xs[k + 1, i] - x_pred[k + 1, i]
                for j in range(s):
                    D[i * s + j] = Ps[k + 1, i, j] - P_pred[k + 1, i, j]
            for i in range(s):
                acc = x_filt[k, i]
                for j in range(s):
                    acc += JT[j * s + i] * dx[j]
                xs[k, i] = acc
            # T = J D ; Ps = P_filt + T J^T
            for i in range(s):
                for j in range(s):
                    acc = 0.0
                    for l in range(s):
                        acc += JT[l * s + i] * D[l * s + j]
                    T[i * s + j] = acc
            for i in range(s):
                for j in range(s):
                    acc = P_filt[k, i, j]
                    for l in range(s):
                        acc += T[i * s + l] * JT[l * s + j]
                    Ps[k, i, j] = acc
            for i in range(s):
                for j in range(i):
                    acc = 0.5 * (Ps[k, i, j] + Ps[k, j, i])
                    Ps[k, i, j] = acc
                    Ps[k, j, i] = acc
    finally:
        free(L); free(JT); free(D); free(T); free(dx)

    if failed >= 0:
        raise ConditioningError(
            f"predicted covariance not positive definite at period {failed}",
            period=failed)
    return x_s_a, P_s_a


def probit_binomial_particles(const double[:, ::1] x, const double[::1] c,
                              const double[:, ::1] Z, const double[::1] m,
                              const double[::1] nm):
    """Sum over rows of m*log(Phi(theta)) + (N-m)*log(Phi(-theta)).

    theta = c + Z x for every particle x (rows of ``x``).  Zero counts
    contribute nothing, even when the matching log-probability is -inf.
    """
    cdef Py_ssize_t N = x.shape[0]
    cdef int s = <int>x.shape[1]
    cdef int p = <int>c.shape[0]
    cdef Py_ssize_t i
    cdef int j, l
    cdef double acc, th, lp, lq
    out_a = np.empty(N)
    cdef double[::1] out = out_a
    with nogil:
        for i in range(N):
            acc = 0.0
            for j in range(p):
                th = c[j]
                for l in range(s):
                    th = th + Z[j, l] * x[i, l]
                _log_both_tails(th, &lp, &lq)
                if m[j] > 0.0:
                    acc = acc + m[j] * lp
                if nm[j] > 0.0:
                    acc = acc + nm[j] * lq
            out[i] = acc
    return out_a


cdef inline double _log_interval(double u, double l) noexcept nogil:
    """log(Phi(u) - Phi(l)) for u > l, either bound possibly infinite."""
    cdef double a, b
    if l >= 0.0:
        a = log_ndtr(-l)
        b = log_ndtr(-u)
        return a + log1p(-exp(b - a))
    if u <= 0.0:
        a = log_ndtr(u)
        b = log_ndtr(l)
        return a + log1p(-exp(b - a))
    return log1p(-(ndtr(l) + ndtr(-u)))


cdef inline double _phi(double z) noexcept nogil:
    if isinf(z):
        return 0.0
    return exp(-0.5 * z * z - LOG_SQRT_2PI)


def probit_binomial_terms(const double[:, ::1] theta, const double[:, ::1] m,
                          const double[:, ::1] nm):
    """Elementwise value, derivative and second derivative in theta of
    m*log(Phi(theta)) + nm*log(Phi(-theta))."""
    cdef Py_ssize_t n = theta.shape[0], p = theta.shape[1]
    cdef Py_ssize_t k, j
    cdef double t, lp, lq, lam_p, lam_q, v, gg, hh, lpdf
    val_a = np.empty((n, p))
    g_a = np.empty((n, p))
    h_a = np.empty((n, p))
    cdef double[:, ::1] val = val_a
    cdef double[:, ::1] g = g_a
    cdef double[:, ::1] h = h_a
    with nogil:
        for k in range(n):
            for j in range(p):
                t = theta[k, j]
                lpdf = -0.5 * t * t - LOG_SQRT_2PI
                v = 0.0
                gg = 0.0
                hh = 0.0
                _log_both_tails(t, &lp, &lq)
                if m[k, j] > 0.0:
                    lam_p = exp(lpdf - lp)
                    v += m[k, j] * lp
                    gg += m[k, j] * lam_p
                    hh -= m[k, j] * lam_p * (t + lam_p)
                if nm[k, j] > 0.0:
                    lam_q = exp(lpdf - lq)
                    v += nm[k, j] * lq
                    gg -= nm[k, j] * lam_q
                    hh -= nm[k, j] * lam_q * (lam_q - t)
                val[k, j] = v
                g[k, j] = gg
                h[k, j] = hh
    return val_a, g_a, h_a


def ordered_probit_terms(const double[::1] theta, const double[:, ::1] upper,
                         const double[:, ::1] lower, const double[:, :, ::1] counts):
    """Per-period sums over (row, column) of counts*log(Phi(u+t) - Phi(l+t))
    and its first two derivatives in t."""
    cdef Py_ssize_t n = theta.shape[0]
    cdef Py_ssize_t R1 = upper.shape[0], J = upper.shape[1]
    cdef Py_ssize_t k, i, j
    cdef double t, u, l, c, logP, inv, pu, pl, d1, d2, v, gg, hh
    val_a = np.empty(n)
    g_a = np.empty(n)
    h_a = np.empty(n)
    cdef double[::1] val = val_a
    cdef double[::1] g = g_a
    cdef double[::1] h = h_a
    with nogil:
        for k in range(n):
            t = theta[k]
            v = 0.0
            gg = 0.0
            hh = 0.0
            for i in range(R1):
                for j in range(J):
                    c = counts[k, i, j]
                    if c <= 0.0:
                        continue
                    u = upper[i, j] + t
                    l = lower[i, j] + t
                    logP = _log_interval(u, l)
                    inv = exp(-logP)
                    pu = _phi(u)
                    pl = _phi(l)
                    d1 = (pu - pl) * inv
                    d2 = ((0.0 if isinf(u) else -u * pu) + (0.0 if isinf(l) else l * pl)) * inv
                    v += c * logP
                    gg += c * d1
                    hh += c * (d2 - d1 * d1)
            val[k] = v
            g[k] = gg
            h[k] = hh
    return val_a, g_a, h_a
