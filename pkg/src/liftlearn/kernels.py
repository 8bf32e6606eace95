"""Trajectory kernels for quadratic systems, compiled when available.

The Cython extension ``liftlearn._kernels`` is used if it imports; otherwise
(or with ``LIFTLEARN_PURE_PYTHON=1``) the NumPy versions in
``liftlearn._kernels_py`` are used. Both honour the same contract.
"""
from __future__ import annotations

import os

import numpy as np

from . import _kernels_py
from .integrators import NewtonOptions, NonConvergence, QuadraticSystem, SingularStepMatrix

_py = _kernels_py
_compiled = None
if os.environ.get("LIFTLEARN_PURE_PYTHON", "") in ("", "0"):
    try:
        from . import _kernels as _compiled  # type: ignore[attr-defined]
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"


def available_backends():
    return ("compiled", "python") if _compiled is not None else ("python",)


def _impl(backend):
    backend = backend or BACKEND
    if backend == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available")
        return _compiled
    if backend == "python":
        return _py
    raise ValueError(f"unknown backend {backend!r}")


def _args(sys: QuadraticSystem, x0):
    return (np.ascontiguousarray(sys.A, dtype=float), np.ascontiguousarray(sys.coo_row, dtype=np.intc),
            np.ascontiguousarray(sys.coo_col, dtype=np.intc), np.ascontiguousarray(sys.coo_src, dtype=np.intc),
            np.ascontiguousarray(sys.coo_val, dtype=float), np.ascontiguousarray(sys.c, dtype=float),
            np.ascontiguousarray(x0, dtype=float))


def kahan_trajectory(sys: QuadraticSystem, x0, dt: float, n_steps: int, backend=None) -> np.ndarray:
    """Kahan trajectory as an ``m x (n_steps + 1)`` matrix."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    out, fail = _impl(backend).kahan_run(*_args(sys, x0), float(dt), int(n_steps))
    if fail >= 0:
        raise SingularStepMatrix(f"step {fail}: Kahan step matrix singular or solution not finite",
                                 step=int(fail))
    return np.asarray(out).T


def midpoint_trajectory(sys: QuadraticSystem, x0, dt: float, n_steps: int,
                        opts: NewtonOptions = NewtonOptions(), backend=None) -> np.ndarray:
    """Implicit midpoint trajectory (Newton with the analytic Jacobian)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    out, fail = _impl(backend).midpoint_run(*_args(sys, x0), float(dt), int(n_steps),
                                            float(opts.tol), int(opts.max_iter))
    if fail >= 0:
        raise NonConvergence(f"step {fail}: Newton did not reach tolerance {opts.tol:.1e}",
                             step=int(fail))
    return np.asarray(out).T
