"""Benchmark conservative full-order models (FOMs).

Four problems are defined on uniform grids:

* ``exp_wave_1d``   -- q_tt = q_xx + exp(-q) on (0, pi), homogeneous Dirichlet
* ``sine_gordon_1d`` -- q_tt = q_xx - sin(q) on (-20, 20), periodic
* ``sine_gordon_2d`` -- q_tt = lap(q) - sin(q) on (-7, 7)^2, periodic
* ``kgz_2d``         -- Klein-Gordon-Zakharov system on (-20, 20)^2, periodic

The wave-type problems are written in first-order form ``q' = p``,
``p' = D q - f_non(q)`` with ``f_non = g'``. States are stored as stacked
vectors ``[field_0, field_1, ...]`` (each field has length ``n``); 2D fields
are flattened row-major with ``y`` as the outer index and ``x`` the inner one.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp


class Problem(str, Enum):
    EXP_WAVE_1D = "exp_wave_1d"
    SINE_GORDON_1D = "sine_gordon_1d"
    SINE_GORDON_2D = "sine_gordon_2d"
    KGZ_2D = "kgz_2d"


PERIODIC = "periodic"
DIRICHLET = "dirichlet"


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform tensor-product grid in one or two dimensions.

    Periodic axes carry ``n`` nodes ``a + i*h`` with ``h = (b - a)/n``;
    Dirichlet axes carry only the ``n`` interior nodes with ``h = (b - a)/(n + 1)``.
    """

    extents: Tuple[Tuple[float, float], ...]
    points: Tuple[int, ...]
    bcs: Tuple[str, ...]

    def __post_init__(self):
        if not (len(self.extents) == len(self.points) == len(self.bcs)):
            raise ValueError("extents, points and bcs must have equal length")
        if self.dimension not in (1, 2):
            raise ValueError("only 1D and 2D grids are supported")
        for (a, b), n, bc in zip(self.extents, self.points, self.bcs):
            if bc not in (PERIODIC, DIRICHLET):
                raise ValueError(f"unknown boundary condition {bc!r}")
            if not b > a:
                raise ValueError("grid extents must satisfy b > a")
            if n < 1:
                raise ValueError("need at least one grid point per axis")

    @property
    def dimension(self) -> int:
        return len(self.points)

    @property
    def spacing(self) -> Tuple[float, ...]:
        out = []
        for (a, b), n, bc in zip(self.extents, self.points, self.bcs):
            out.append((b - a) / n if bc == PERIODIC else (b - a) / (n + 1))
        return tuple(out)

    @property
    def n(self) -> int:
        return int(np.prod(self.points))

    def axis_nodes(self, axis: int) -> np.ndarray:
        (a, _), n, bc = self.extents[axis], self.points[axis], self.bcs[axis]
        h = self.spacing[axis]
        offset = 0 if bc == PERIODIC else 1
        return a + h * (np.arange(n) + offset)

    def mesh(self) -> Tuple[np.ndarray, ...]:
        """Flattened node coordinates, one array of length ``n`` per axis."""
        if self.dimension == 1:
            return (self.axis_nodes(0),)
        X, Y = np.meshgrid(self.axis_nodes(0), self.axis_nodes(1), indexing="xy")
        return X.ravel(), Y.ravel()

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))


def _second_difference(n: int, h: float, bc: str) -> sp.csr_matrix:
    if bc == PERIODIC and n < 3:
        raise ValueError("periodic second-difference stencil needs n >= 3")
    rows, cols, vals = [], [], []
    for i in range(n):
        rows.append(i)
        cols.append(i)
        vals.append(-2.0)
        for j in (i - 1, i + 1):
            if bc == PERIODIC:
                rows.append(i)
                cols.append(j % n)
                vals.append(1.0)
            elif 0 <= j < n:
                rows.append(i)
                cols.append(j)
                vals.append(1.0)
    # integer stencil first, then one scaling: entries stay exactly symmetric
    return (sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()) / (h * h)


def build_laplacian(grid: SpatialGrid) -> sp.csr_matrix:
    """Symmetric second-order discrete Laplacian on ``grid``.

    1D: ``[1, -2, 1]/h^2``; 2D: the five-point stencil with row-major
    flattening (``kron(I_ny, Dx) + kron(Dy, I_nx)``).
    """
    if grid.dimension == 1:
        D = _second_difference(grid.points[0], grid.spacing[0], grid.bcs[0])
    else:
        nx, ny = grid.points
        Dx = _second_difference(nx, grid.spacing[0], grid.bcs[0])
        Dy = _second_difference(ny, grid.spacing[1], grid.bcs[1])
        D = sp.kron(sp.identity(ny), Dx) + sp.kron(Dy, sp.identity(nx))
    D = sp.csr_matrix(D)
    D.sum_duplicates()
    D.sort_indices()
    return D


@dataclass
class FOMState:
    """Named field vectors of a FOM (or lifted FOM) state at time ``t``."""

    fields: Dict[str, np.ndarray]
    t: float = 0.0

    def __post_init__(self):
        lengths = {np.shape(v) for v in self.fields.values()}
        if len(lengths) > 1:
            raise ValueError(f"field vectors have mismatched shapes {lengths}")
        self.fields = {k: np.asarray(v, dtype=float) for k, v in self.fields.items()}

    def __getitem__(self, name: str) -> np.ndarray:
        return self.fields[name]

    @property
    def n(self) -> int:
        return len(next(iter(self.fields.values())))


def _exp_g(q):
    return np.exp(-q)


def _exp_f(q):
    return -np.exp(-q)


def _exp_df(q):
    return np.exp(-q)


def _sg_g(q):
    return 1.0 - np.cos(q)


def _sg_f(q):
    return np.sin(q)


def _sg_df(q):
    return np.cos(q)


_WAVE_NONLINEARITY = {
    Problem.EXP_WAVE_1D: (_exp_g, _exp_f, _exp_df),
    Problem.SINE_GORDON_1D: (_sg_g, _sg_f, _sg_df),
    Problem.SINE_GORDON_2D: (_sg_g, _sg_f, _sg_df),
}

KGZ_FIELDS = ("q1", "q2", "p1", "p2", "varphi", "phi")
WAVE_FIELDS = ("q", "p")


@dataclass
class ConservativeFOM:
    """Space-discretized conservative PDE.

    The stacked-vector methods (:meth:`rhs`, :meth:`jacobian`, :meth:`energy`)
    are what the integrators consume; :func:`fom_rhs` and :func:`fom_energy`
    offer the same maps on :class:`FOMState` objects.
    """

    problem: Problem
    grid: SpatialGrid
    D: sp.csr_matrix = field(repr=False)
    fields: Tuple[str, ...]
    g: Optional[Callable] = field(default=None, repr=False)
    f_non: Optional[Callable] = field(default=None, repr=False)
    df_non: Optional[Callable] = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def dim(self) -> int:
        return self.n * len(self.fields)

    @property
    def canonical(self) -> bool:
        return self.problem is not Problem.KGZ_2D

    # ---- stacking -------------------------------------------------------
    def pack(self, state: FOMState) -> np.ndarray:
        missing = set(self.fields) - set(state.fields)
        if missing:
            raise ValueError(f"state is missing fields {sorted(missing)}")
        for name in self.fields:
            if state[name].shape != (self.n,):
                raise ValueError(
                    f"field {name!r} has shape {state[name].shape}, expected ({self.n},)")
        return np.concatenate([state[name] for name in self.fields])

    def unpack(self, x: np.ndarray, t: float = 0.0) -> FOMState:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"state vector has shape {x.shape}, expected ({self.dim},)")
        n = self.n
        return FOMState({name: x[i * n:(i + 1) * n] for i, name in enumerate(self.fields)}, t)

    def split(self, X: np.ndarray) -> Dict[str, np.ndarray]:
        """Split a stacked vector or snapshot matrix into per-field blocks."""
        n = self.n
        return {name: X[i * n:(i + 1) * n] for i, name in enumerate(self.fields)}

    # ---- dynamics -------------------------------------------------------
    def rhs(self, x: np.ndarray) -> np.ndarray:
        n, D = self.n, self.D
        if self.canonical:
            q, p = x[:n], x[n:]
            return np.concatenate([p, D @ q - self.f_non(q)])
        q1, q2, p1, p2, vphi, phi = (x[i * n:(i + 1) * n] for i in range(6))
        w = q1 * q1 + q2 * q2
        return np.concatenate([
            p1,
            p2,
            D @ q1 - q1 - phi * q1 - w * q1,
            D @ q2 - q2 - phi * q2 - w * q2,
            phi + w,
            D @ vphi,
        ])

    def jacobian(self, x: np.ndarray) -> sp.csc_matrix:
        n, D = self.n, self.D
        I = sp.identity(n, format="csr")
        diag = sp.diags
        if self.canonical:
            q = x[:n]
            J = sp.bmat([[None, I], [D - diag(self.df_non(q)), None]], format="csc")
            return J
        q1, q2, p1, p2, vphi, phi = (x[i * n:(i + 1) * n] for i in range(6))
        J = sp.bmat([
            [None, None, I, None, None, None],
            [None, None, None, I, None, None],
            [D - I - diag(phi + 3 * q1 * q1 + q2 * q2), diag(-2 * q1 * q2), None, None, None, diag(-q1)],
            [diag(-2 * q1 * q2), D - I - diag(phi + q1 * q1 + 3 * q2 * q2), None, None, None, diag(-q2)],
            [diag(2 * q1), diag(2 * q2), None, None, None, I],
            [None, None, None, None, D, None],
        ], format="csc")
        return J

    def linear_part(self) -> sp.csr_matrix:
        """Jacobian of the state-independent (linear) part of :meth:`rhs`."""
        n, D = self.n, self.D
        I = sp.identity(n, format="csr")
        if self.canonical:
            return sp.bmat([[None, I], [D, None]], format="csr")
        Z = None
        return sp.bmat([
            [Z, Z, I, Z, Z, Z],
            [Z, Z, Z, I, Z, Z],
            [D - I, Z, Z, Z, Z, Z],
            [Z, D - I, Z, Z, Z, Z],
            [Z, Z, Z, Z, Z, I],
            [Z, Z, Z, Z, D, Z],
        ], format="csr")

    def energy(self, x: np.ndarray) -> float:
        n, D = self.n, self.D
        if self.canonical:
            q, p = x[:n], x[n:]
            return float(0.5 * p @ p - 0.5 * q @ (D @ q) + np.sum(self.g(q)))
        q1, q2, p1, p2, vphi, phi = (x[i * n:(i + 1) * n] for i in range(6))
        w = q1 * q1 + q2 * q2
        return float(
            p1 @ p1 + p2 @ p2
            + q1 @ q1 - q1 @ (D @ q1) + q2 @ q2 - q2 @ (D @ q2)
            - 0.5 * vphi @ (D @ vphi) + 0.5 * phi @ phi
            + phi @ w + 0.5 * w @ w
        )

    def energy_series(self, X: np.ndarray) -> np.ndarray:
        return np.array([self.energy(X[:, k]) for k in range(X.shape[1])])


# ---- constructors -----------------------------------------------------------
PAPER_POINTS = {
    Problem.EXP_WAVE_1D: (200,),
    Problem.SINE_GORDON_1D: (200,),
    Problem.SINE_GORDON_2D: (100, 100),
    Problem.KGZ_2D: (400, 400),
}


def make_grid(problem: Problem | str, points: Optional[Sequence[int]] = None) -> SpatialGrid:
    problem = Problem(problem)
    pts = tuple(int(p) for p in (points or PAPER_POINTS[problem]))
    if problem is Problem.EXP_WAVE_1D:
        return SpatialGrid(((0.0, np.pi),), pts, (DIRICHLET,))
    if problem is Problem.SINE_GORDON_1D:
        return SpatialGrid(((-20.0, 20.0),), pts, (PERIODIC,))
    if problem is Problem.SINE_GORDON_2D:
        return SpatialGrid(((-7.0, 7.0), (-7.0, 7.0)), pts, (PERIODIC, PERIODIC))
    return SpatialGrid(((-20.0, 20.0), (-20.0, 20.0)), pts, (PERIODIC, PERIODIC))


def make_fom(problem: Problem | str, points: Optional[Sequence[int]] = None) -> ConservativeFOM:
    """Build the benchmark FOM (paper grid sizes unless ``points`` is given)."""
    problem = Problem(problem)
    grid = make_grid(problem, points)
    D = build_laplacian(grid)
    if problem is Problem.KGZ_2D:
        return ConservativeFOM(problem, grid, D, KGZ_FIELDS)
    g, f, df = _WAVE_NONLINEARITY[problem]
    return ConservativeFOM(problem, grid, D, WAVE_FIELDS, g, f, df)


def _sech(z):
    with np.errstate(over="ignore"):
        return 1.0 / np.cosh(z)


def initial_condition(model: ConservativeFOM) -> FOMState:
    grid = model.grid
    zeros = np.zeros(grid.n)
    if model.problem is Problem.EXP_WAVE_1D:
        (x,) = grid.mesh()
        return FOMState({"q": 0.5 * x * (np.pi - x), "p": zeros.copy()})
    if model.problem is Problem.SINE_GORDON_1D:
        (x,) = grid.mesh()
        return FOMState({"q": zeros.copy(), "p": 4.0 / np.cosh(x)})
    if model.problem is Problem.SINE_GORDON_2D:
        x, y = grid.mesh()
        return FOMState({"q": 4.0 * np.arctan(np.exp(3.0 - np.hypot(x, y))), "p": zeros.copy()})
    x, y = grid.mesh()
    bump = _sech(-(x - 2.0) ** 2 - y ** 2) + _sech(-x ** 2 - (y - 2.0) ** 2)
    # phi_t(0) = D varphi(0) = 0 is met by varphi(0) = 0
    return FOMState({
        "q1": bump.copy(), "q2": zeros.copy(), "p1": zeros.copy(), "p2": zeros.copy(),
        "varphi": zeros.copy(), "phi": bump.copy(),
    })


def fom_rhs(model: ConservativeFOM, state: FOMState) -> FOMState:
    return model.unpack(model.rhs(model.pack(state)), state.t)


def fom_energy(model: ConservativeFOM, state: FOMState) -> float:
    return model.energy(model.pack(state))
