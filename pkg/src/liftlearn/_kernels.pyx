# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled trajectory kernels for quadratic systems (see _kernels_py for the contract)."""
import numpy as np
import scipy.linalg

from libc.math cimport fabs, isfinite
from scipy.linalg.cython_blas cimport dgemm
from scipy.linalg.cython_lapack cimport dgesv


cdef inline void _bilinear(double* Mf, int m, const int[::1] row, const int[::1] col,
                           const int[::1] src, const double[::1] val, const double* x,
                           double scale) noexcept nogil:
    # column-major: Mf[i + l*m] += scale * val * x[src]
    cdef Py_ssize_t e
    for e in range(val.shape[0]):
        Mf[row[e] + col[e] * m] += scale * val[e] * x[src[e]]


def kahan_run(const double[:, ::1] A, const int[::1] row, const int[::1] col,
              const int[::1] src, const double[::1] val, const double[::1] c,
              const double[::1] x0, double dt, Py_ssize_t nsteps):
    cdef int m = A.shape[0]
    rows_n = np.unique(np.asarray(row))
    if 0 < rows_n.size < m:
        res = _kahan_schur(A, row, col, src, val, c, x0, dt, nsteps, rows_n)
        if res is not None:
            return res
    return _kahan_full(A, row, col, src, val, c, x0, dt, nsteps)


def _kahan_full(const double[:, ::1] A, const int[::1] row, const int[::1] col,
                const int[::1] src, const double[::1] val, const double[::1] c,
                const double[::1] x0, double dt, Py_ssize_t nsteps):
    cdef int m = A.shape[0]
    cdef int nrhs = 1, info = 0
    cdef Py_ssize_t i, l, k
    out = np.empty((nsteps + 1, m))
    cdef double[:, ::1] X = out
    cdef double[::1] Mf = np.empty(m * m)
    cdef double[::1] M0 = np.empty(m * m)
    cdef double[::1] b = np.empty(m)
    cdef int[::1] piv = np.empty(m, dtype=np.intc)
    cdef double s
    for i in range(m):
        X[0, i] = x0[i]
    for l in range(m):
        for i in range(m):
            M0[i + l * m] = -0.5 * dt * A[i, l]
        M0[l + l * m] += 1.0
    with nogil:
        for k in range(nsteps):
            for i in range(m * m):
                Mf[i] = M0[i]
            _bilinear(&Mf[0], m, row, col, src, val, &X[k, 0], -dt)
            for i in range(m):
                s = X[k, i] + dt * c[i]
                for l in range(m):
                    s = s + 0.5 * dt * A[i, l] * X[k, l]
                b[i] = s
            dgesv(&m, &nrhs, &Mf[0], &m, &piv[0], &b[0], &m, &info)
            if info != 0:
                with gil:
                    return out, k
            for i in range(m):
                if not isfinite(b[i]):
                    with gil:
                        return out, k
                X[k + 1, i] = b[i]
    return out, -1


def _kahan_schur(const double[:, ::1] A, const int[::1] row, const int[::1] col,
                 const int[::1] src, const double[::1] val, const double[::1] c,
                 const double[::1] x0, double dt, Py_ssize_t nsteps, rows_n):
    # Rows without quadratic terms give a constant block M_LL of the step
    # matrix; eliminating it leaves an n x n system per step (n = #rows_n).
    cdef int m = A.shape[0]
    rows_l = np.setdiff1d(np.arange(m), rows_n)
    cdef int n = rows_n.size, nl = rows_l.size
    An = np.asarray(A)
    M0 = np.eye(m) - 0.5 * dt * An
    try:
        lu = scipy.linalg.lu_factor(M0[np.ix_(rows_l, rows_l)], check_finite=False)
    except (ValueError, np.linalg.LinAlgError):
        return None
    if not np.all(np.isfinite(lu[0])) or np.any(np.diag(lu[0]) == 0.0):
        return None
    Pm = scipy.linalg.lu_solve(lu, M0[np.ix_(rows_l, rows_n)], check_finite=False)   # M_LL^-1 M_LN
    Linv = scipy.linalg.lu_solve(lu, np.eye(nl), check_finite=False)
    M0nl = M0[np.ix_(rows_n, rows_l)]
    S0 = M0[np.ix_(rows_n, rows_n)] - M0nl @ Pm
    # column-major buffers: S (n x n) followed by the state part of M_NL (n x nl)
    pos = np.empty(m, dtype=np.intp)
    pos[rows_n] = np.arange(n)
    pos[rows_l] = np.arange(nl)
    is_n = np.zeros(m, dtype=bool)
    is_n[rows_n] = True
    r_arr, c_arr = np.asarray(row), np.asarray(col)
    flat_np = np.where(is_n[c_arr], pos[r_arr] + pos[c_arr] * n, n * n + pos[r_arr] + pos[c_arr] * n)
    cdef int[::1] flat = flat_np.astype(np.intc)
    cdef double[::1] S0f = np.asfortranarray(S0).ravel(order="F")
    cdef double[::1] Pf = np.asfortranarray(Pm).ravel(order="F")
    cdef double[::1] Lf = np.asfortranarray(Linv).ravel(order="F")
    cdef double[::1] M0nlf = np.asfortranarray(M0nl).ravel(order="F")
    cdef int[::1] rn = rows_n.astype(np.intc)
    cdef int[::1] rl = rows_l.astype(np.intc)

    out = np.empty((nsteps + 1, m))
    cdef double[:, ::1] X = out
    cdef double[::1] W = np.empty(n * n + n * nl)
    cdef double[::1] b = np.empty(m)
    cdef double[::1] u = np.empty(nl)
    cdef double[::1] y = np.empty(n)
    cdef int[::1] piv = np.empty(n, dtype=np.intc)
    cdef int nrhs = 1, info = 0
    cdef double one = 1.0, mone = -1.0, zero = 0.0
    cdef char tr = b'N'
    cdef int inc = 1
    cdef Py_ssize_t i, l, k, e
    cdef double s
    cdef double* S
    cdef double* D
    for i in range(m):
        X[0, i] = x0[i]
    with nogil:
        S = &W[0]
        D = &W[n * n]
        for k in range(nsteps):
            for i in range(n * n):
                W[i] = S0f[i]
            for i in range(n * nl):
                D[i] = 0.0
            for e in range(val.shape[0]):
                W[flat[e]] += -dt * val[e] * X[k, src[e]]
            for i in range(m):
                s = X[k, i] + dt * c[i]
                for l in range(m):
                    s = s + 0.5 * dt * A[i, l] * X[k, l]
                b[i] = s
            # u = M_LL^-1 b_L
            for i in range(nl):
                u[i] = 0.0
            for l in range(nl):
                s = b[rl[l]]
                for i in range(nl):
                    u[i] += Lf[i + l * nl] * s
            # y = b_N - (M0_NL + D) u
            for i in range(n):
                y[i] = b[rn[i]]
            for l in range(nl):
                s = u[l]
                for i in range(n):
                    y[i] -= (M0nlf[i + l * n] + D[i + l * n]) * s
            # S -= D P
            dgemm(&tr, &tr, &n, &n, &nl, &mone, D, &n, &Pf[0], &nl, &one, S, &n)
            dgesv(&n, &nrhs, S, &n, &piv[0], &y[0], &n, &info)
            if info != 0:
                with gil:
                    return out, k
            # x_L = u - P y
            for l in range(n):
                s = y[l]
                for i in range(nl):
                    u[i] -= Pf[i + l * nl] * s
            for i in range(n):
                if not isfinite(y[i]):
                    with gil:
                        return out, k
                X[k + 1, rn[i]] = y[i]
            for i in range(nl):
                if not isfinite(u[i]):
                    with gil:
                        return out, k
                X[k + 1, rl[i]] = u[i]
    return out, -1


def midpoint_run(const double[:, ::1] A, const int[::1] row, const int[::1] col,
                 const int[::1] src, const double[::1] val, const double[::1] c,
                 const double[::1] x0, double dt, Py_ssize_t nsteps, double tol, int maxit):
    cdef int m = A.shape[0]
    cdef int nrhs = 1, info = 0
    cdef Py_ssize_t i, l, k, e
    cdef int it
    cdef double h = 0.5 * dt, s, res
    cdef bint ok
    out = np.empty((nsteps + 1, m))
    cdef double[:, ::1] X = out
    cdef double[::1] Bf = np.empty(m * m)
    cdef double[::1] Jf = np.empty(m * m)
    cdef double[::1] y = np.empty(m)
    cdef double[::1] R = np.empty(m)
    cdef int[::1] piv = np.empty(m, dtype=np.intc)
    for i in range(m):
        X[0, i] = x0[i]
    with nogil:
        for k in range(nsteps):
            for i in range(m):
                y[i] = X[k, i]
            ok = False
            for it in range(maxit + 1):
                for i in range(m * m):
                    Bf[i] = 0.0
                _bilinear(&Bf[0], m, row, col, src, val, &y[0], 1.0)
                res = 0.0
                for i in range(m):
                    s = c[i]
                    for l in range(m):
                        s = s + (A[i, l] + Bf[i + l * m]) * y[l]
                    R[i] = y[i] - X[k, i] - h * s
                    if fabs(R[i]) > res or not isfinite(R[i]):
                        res = fabs(R[i]) if isfinite(R[i]) else 1e300
                if 2.0 * res <= tol:
                    ok = True
                    break
                if it == maxit or res >= 1e300:
                    break
                for l in range(m):
                    for i in range(m):
                        Jf[i + l * m] = -h * (A[i, l] + 2.0 * Bf[i + l * m])
                    Jf[l + l * m] += 1.0
                dgesv(&m, &nrhs, &Jf[0], &m, &piv[0], &R[0], &m, &info)
                if info != 0:
                    break
                for i in range(m):
                    y[i] = y[i] - R[i]
            if not ok:
                with gil:
                    return out, k
            for i in range(m):
                X[k + 1, i] = 2.0 * y[i] - X[k, i]
    return out, -1
