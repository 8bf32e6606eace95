"""Structure-preserving time steppers and finite-difference time derivatives."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class IntegrationError(RuntimeError):
    """Base class for stepper failures; ``step`` is set by :func:`integrate`."""

    def __init__(self, msg: str, step: Optional[int] = None):
        super().__init__(msg)
        self.step = step


class NonConvergence(IntegrationError):
    pass


class SingularStepMatrix(IntegrationError):
    pass


class SeriesTooShort(ValueError):
    pass


@dataclass(frozen=True)
class NewtonOptions:
    tol: float = 1e-12
    max_iter: int = 50
    jacobian: str = "analytic"  # or "finite-difference"

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("Newton tolerance must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.jacobian not in ("analytic", "finite-difference"):
            raise ValueError(f"unknown jacobian mode {self.jacobian!r}")


def _fd_jacobian(rhs, x, eps=1e-7):
    f0 = rhs(x)
    J = np.empty((f0.size, x.size))
    for j in range(x.size):
        h = eps * max(1.0, abs(x[j]))
        xp = x.copy()
        xp[j] += h
        xm = x.copy()
        xm[j] -= h
        J[:, j] = (rhs(xp) - rhs(xm)) / (2 * h)
    return J


def implicit_midpoint_step(rhs: Callable, jac: Optional[Callable], x: np.ndarray,
                           dt: float, opts: NewtonOptions = NewtonOptions()) -> np.ndarray:
    """One implicit midpoint step ``x' = x + dt*rhs((x + x')/2)``.

    Newton iterates on the midpoint ``y = (x + x')/2``; the residual reported
    against ``opts.tol`` is that of the ``x'`` equation (max-norm).
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    if jac is None or opts.jacobian == "finite-difference":
        jac = lambda y: _fd_jacobian(rhs, y)  # noqa: E731
    y = x.copy()
    h = 0.5 * dt
    res = np.inf
    for _ in range(opts.max_iter + 1):
        R = y - x - h * rhs(y)
        res = 2.0 * np.max(np.abs(R))
        if res <= opts.tol:
            return 2.0 * y - x
        if _ == opts.max_iter:
            break
        J = jac(y)
        if sp.issparse(J):
            M = sp.identity(x.size, format="csc") - h * J
            dy = spla.spsolve(sp.csc_matrix(M), R)
        else:
            dy = la.solve(np.eye(x.size) - h * np.asarray(J), R)
        y = y - dy
        if not np.all(np.isfinite(y)):
            break
    raise NonConvergence(f"Newton residual {res:.3e} above tolerance {opts.tol:.1e} "
                         f"after {opts.max_iter} iterations")


def chord_midpoint_stepper(rhs: Callable, J0, dt: float,
                           opts: NewtonOptions = NewtonOptions()) -> Callable:
    """Implicit midpoint with a chord (frozen-Jacobian) iteration.

    ``I - dt/2*J0`` is factorized once; the iteration converges to the same
    midpoint solution as Newton whenever ``dt/2 * ||J - J0||`` is small, which
    holds for the benchmark FOMs with ``J0`` their linear part.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    h = 0.5 * dt
    m = J0.shape[0]
    if sp.issparse(J0):
        lu = spla.splu(sp.csc_matrix(sp.identity(m) - h * J0))
        solve = lu.solve
    else:
        fac = la.lu_factor(np.eye(m) - h * np.asarray(J0))
        solve = lambda b: la.lu_solve(fac, b)  # noqa: E731

    def step(x):
        y = x.copy()
        res = np.inf
        for it in range(opts.max_iter + 1):
            R = y - x - h * rhs(y)
            res = 2.0 * np.max(np.abs(R))
            if res <= opts.tol:
                return 2.0 * y - x
            if it == opts.max_iter or not np.isfinite(res):
                break
            y = y - solve(R)
        raise NonConvergence(f"chord iteration residual {res:.3e} above tolerance "
                             f"{opts.tol:.1e} after {opts.max_iter} iterations")

    return step


class QuadraticSystem:
    """``x' = c + A x + B(x, x)`` with a symmetric bilinear ``B``.

    The quadratic part is given as terms ``(coef, i, j, l)`` meaning
    ``x'_i += coef * x_j * x_l``. Internally the polarized form is stored as
    a sparse operator ``S`` with ``B(x, .) = reshape(S @ x, (m, m))``.
    """

    def __init__(self, A: np.ndarray, rows: Sequence[int], left: Sequence[int],
                 right: Sequence[int], coefs: Sequence[float], c: Optional[np.ndarray] = None):
        A = np.asarray(A, dtype=float)
        m = A.shape[0]
        if A.shape != (m, m):
            raise ValueError("A must be square")
        self.m = m
        self.A = A
        self.c = np.zeros(m) if c is None else np.asarray(c, dtype=float)
        i = np.asarray(rows, dtype=np.int64)
        j = np.asarray(left, dtype=np.int64)
        l = np.asarray(right, dtype=np.int64)
        v = np.asarray(coefs, dtype=float)
        # polarize: B(x, .)[i, l] += v/2 x_j and B(x, .)[i, j] += v/2 x_l
        self.coo_row = np.concatenate([i, i]).astype(np.int32)
        self.coo_col = np.concatenate([l, j]).astype(np.int32)
        self.coo_src = np.concatenate([j, l]).astype(np.int32)
        self.coo_val = np.concatenate([0.5 * v, 0.5 * v])
        self.S = sp.csr_matrix(
            (self.coo_val, (self.coo_row.astype(np.int64) * m + self.coo_col, self.coo_src)),
            shape=(m * m, m))

    @classmethod
    def from_blocks(cls, A: np.ndarray, terms: Iterable[Tuple[np.ndarray, slice, slice, slice]],
                    c: Optional[np.ndarray] = None) -> "QuadraticSystem":
        """Build from dense tensors ``H`` with ``x'[out] += H(x[left], x[right])``."""
        rows, left, right, coefs = [], [], [], []
        for H, out, lsl, rsl in terms:
            ii, jj, ll = np.nonzero(H)
            rows.append(ii + out.start)
            left.append(jj + lsl.start)
            right.append(ll + rsl.start)
            coefs.append(H[ii, jj, ll])
        if not rows:
            return cls(A, [], [], [], [], c)
        return cls(A, np.concatenate(rows), np.concatenate(left), np.concatenate(right),
                   np.concatenate(coefs), c)

    def bilinear_matrix(self, x: np.ndarray) -> np.ndarray:
        """Matrix of ``v -> B(x, v)``."""
        return (self.S @ x).reshape(self.m, self.m)

    def bilinear(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        return self.bilinear_matrix(u) @ v

    def rhs(self, x: np.ndarray) -> np.ndarray:
        return self.c + self.A @ x + self.bilinear_matrix(x) @ x

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        return self.A + 2.0 * self.bilinear_matrix(x)


def kahan_step(sys: QuadraticSystem, x: np.ndarray, dt: float) -> np.ndarray:
    """Kahan's linearly implicit step for a quadratic vector field.

    Solves ``(x' - x)/dt = B(x, x') + A (x + x')/2 + c``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    M = np.eye(sys.m) - dt * sys.bilinear_matrix(x) - 0.5 * dt * sys.A
    b = x + 0.5 * dt * (sys.A @ x) + dt * sys.c
    try:
        lu, piv = la.lu_factor(M, check_finite=True)
    except (la.LinAlgError, ValueError) as exc:
        raise SingularStepMatrix(f"Kahan step matrix not factorizable: {exc}") from exc
    if np.any(np.abs(np.diag(lu)) <= np.finfo(float).eps * np.max(np.abs(lu))):
        raise SingularStepMatrix("Kahan step matrix is singular (reduce dt)")
    return la.lu_solve((lu, piv), b)


def integrate(stepper: Callable[[np.ndarray], np.ndarray], x0: np.ndarray, dt: float,
              n_steps: int) -> Tuple[np.ndarray, np.ndarray]:
    """Run ``stepper`` ``n_steps`` times; returns ``(times, X)`` with ``X[:, k]`` at ``k*dt``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x0, dtype=float).copy()
    X = np.empty((x.size, n_steps + 1))
    X[:, 0] = x
    for k in range(n_steps):
        try:
            x = stepper(x)
        except IntegrationError as exc:
            exc.step = k
            raise type(exc)(f"step {k}: {exc}", step=k) from exc
        X[:, k + 1] = x
    return dt * np.arange(n_steps + 1), X


# ---- time derivatives ----------------------------------------------------------
_CD8 = (Fraction(1, 280), Fraction(-4, 105), Fraction(1, 5), Fraction(-4, 5), Fraction(0),
        Fraction(4, 5), Fraction(-1, 5), Fraction(4, 105), Fraction(-1, 280))
CD8_WEIGHTS = np.array([float(c) for c in _CD8])


def central_diff_8(series: np.ndarray, dt: float) -> Tuple[np.ndarray, Tuple[int, int]]:
    """Eighth-order central differences along axis 1.

    Returns the derivative at samples ``4..K-5`` and that inclusive index range.
    """
    series = np.asarray(series, dtype=float)
    squeeze = series.ndim == 1
    if squeeze:
        series = series[None, :]
    K = series.shape[1]
    if K < 9:
        raise SeriesTooShort(f"eighth-order stencil needs >= 9 samples, got {K}")
    out = np.zeros((series.shape[0], K - 8))
    # antisymmetric pairs: constants difference to exactly zero
    for k in range(4, 0, -1):
        out += CD8_WEIGHTS[4 + k] * (series[:, 4 + k:K - 4 + k] - series[:, 4 - k:K - 4 - k])
    out /= dt
    return (out[0] if squeeze else out), (4, K - 5)
