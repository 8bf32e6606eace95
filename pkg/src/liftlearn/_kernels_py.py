"""NumPy/SciPy reference implementations of the trajectory kernels.

The quadratic part is passed in polarized COO form: entry ``e`` adds
``val[e] * x[src[e]]`` to ``B(x, .)[row[e], col[e]]``.
Each kernel returns ``(trajectory, fail_step)`` with ``fail_step = -1`` on success.
"""
import numpy as np
import scipy.linalg as la
import scipy.sparse as sp


def _bilinear_operator(m, row, col, src, val):
    return sp.csr_matrix((val, (row.astype(np.int64) * m + col, src)), shape=(m * m, m))


def kahan_run(A, row, col, src, val, c, x0, dt, nsteps):
    m = A.shape[0]
    S = _bilinear_operator(m, row, col, src, val)
    M0 = np.eye(m) - 0.5 * dt * A
    P = np.eye(m) + 0.5 * dt * A
    dc = dt * c
    out = np.empty((nsteps + 1, m))
    out[0] = x0
    x = out[0]
    for k in range(nsteps):
        M = M0 - dt * (S @ x).reshape(m, m)
        try:
            lu = la.lu_factor(M, check_finite=False)
        except la.LinAlgError:
            return out, k
        if np.any(np.diag(lu[0]) == 0.0):
            return out, k
        x = la.lu_solve(lu, P @ x + dc, check_finite=False)
        if not np.all(np.isfinite(x)):
            return out, k
        out[k + 1] = x
    return out, -1


def midpoint_run(A, row, col, src, val, c, x0, dt, nsteps, tol, maxit):
    m = A.shape[0]
    S = _bilinear_operator(m, row, col, src, val)
    h = 0.5 * dt
    I = np.eye(m)
    out = np.empty((nsteps + 1, m))
    out[0] = x0
    x = out[0]
    for k in range(nsteps):
        y = x.copy()
        ok = False
        for it in range(maxit + 1):
            By = (S @ y).reshape(m, m)
            R = y - x - h * (c + A @ y + By @ y)
            if 2.0 * np.max(np.abs(R)) <= tol:
                ok = True
                break
            if it == maxit or not np.all(np.isfinite(R)):
                break
            try:
                y = y - la.solve(I - h * (A + 2.0 * By), R, check_finite=False)
            except la.LinAlgError:
                break
        if not ok:
            return out, k
        x = 2.0 * y - x
        out[k + 1] = x
    return out, -1
