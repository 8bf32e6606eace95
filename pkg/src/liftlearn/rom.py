"""Quadratic reduced models: assembly, simulation and error diagnostics."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np

from . import kernels
from .integrators import NewtonOptions, QuadraticSystem, implicit_midpoint_step, integrate
from .lifting import LiftingSpec, QuadraticTensor, lift_fields
from .opinf import kron2c, quadratic_index_pairs, reduced_nonlinearity
from .pde_bench import ConservativeFOM, FOMState, Problem
from .reduction import ReducedBasis

STEPPERS = ("kahan", "midpoint")


def n_steps_for(T: float, dt: float) -> int:
    """Number of steps of size ``dt`` covering ``[0, T]``; rejects non-integer ratios."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    k = int(round(T / dt))
    if k < 0 or abs(k * dt - T) > 1e-9 * max(1.0, abs(T)):
        raise ValueError(f"T={T} is not an integer multiple of dt={dt}")
    return k


@dataclass
class QuadraticROM:
    """Learned quadratic reduced model on the stacked reduced state.

    ``operators`` holds the learned symmetric blocks (``"D"`` for wave
    problems; ``"D_q1"``, ``"D_q2"``, ``"D_phi"`` for KGZ). ``system`` is the
    equivalent ``c + A x + B(x, x)`` view used by the steppers.
    """

    spec: LiftingSpec
    basis: ReducedBasis
    operators: Dict[str, np.ndarray]
    tensors: Dict[str, QuadraticTensor]
    system: QuadraticSystem
    x0: np.ndarray

    @property
    def problem(self) -> Problem:
        return self.spec.problem

    @property
    def dim(self) -> int:
        return self.system.m

    def unstack(self, x: np.ndarray) -> Dict[str, np.ndarray]:
        return self.basis.unstack(x)

    def rhs(self, x: np.ndarray) -> np.ndarray:
        return self.system.rhs(x)

    def equation_rhs(self, x: np.ndarray) -> np.ndarray:
        """Evaluate the model equation by equation (independent of ``system``)."""
        f = self.unstack(x)
        ops, T = self.operators, self.tensors
        if self.problem is Problem.KGZ_2D:
            out = {
                "q1": f["p1"], "q2": f["p2"],
                "varphi": f["phi"] + f["w"],
                "phi": ops["D_phi"] @ f["varphi"],
                "w": T["H_w"].apply(f["q1"], f["p1"]) + T["H_w"].apply(f["q2"], f["p2"]),
            }
            for i in ("1", "2"):
                q = f["q" + i]
                # H_p already carries the minus sign of the coupling
                out["p" + i] = (ops["D_q" + i] @ q - q + T["H_p"].apply(f["phi"], q)
                                + T["H_p"].apply(f["w"], q))
        else:
            out = {"q": f["p"], "p": ops["D"] @ f["q"]}
            for name in self.spec.aux_names:
                out[name] = np.zeros_like(f[name])
            for cp in self.spec.couplings():
                out[cp.out] = out[cp.out] + T[cp.tensor].apply(f[cp.left], f[cp.right])
        return self.basis.stack(out)


def _linear_blocks(spec: LiftingSpec, ops: Mapping[str, np.ndarray], r: int):
    I = np.eye(r)
    if spec.problem is Problem.KGZ_2D:
        return [("q1", "p1", I), ("q2", "p2", I),
                ("p1", "q1", ops["D_q1"] - I), ("p2", "q2", ops["D_q2"] - I),
                ("varphi", "phi", I), ("varphi", "w", I),
                ("phi", "varphi", ops["D_phi"])]
    return [("q", "p", I), ("p", "q", ops["D"])]


def assemble_rom(spec: LiftingSpec, basis: ReducedBasis, operators: Mapping[str, np.ndarray],
                 tensors: Mapping[str, QuadraticTensor],
                 initial_state: Optional[FOMState] = None) -> QuadraticROM:
    """Stack learned operators and analytic tensors into one quadratic system.

    The reduced initial condition is the projection of the lifted FOM
    initial state (zeros if ``initial_state`` is omitted).
    """
    r = basis.r
    sl = basis.slices()
    for name, M in operators.items():
        if M.shape != (r, r):
            raise ValueError(f"operator {name} has shape {M.shape}, expected ({r}, {r})")
    for name, H in tensors.items():
        if H.shape != (r, r, r):
            raise ValueError(f"tensor {name} has shape {H.shape}, expected ({r}, {r}, {r})")
    m = basis.total_dim
    A = np.zeros((m, m))
    for out, src, M in _linear_blocks(spec, operators, r):
        A[sl[out], sl[src]] += M
    terms = [(tensors[cp.tensor].H, sl[cp.out], sl[cp.left], sl[cp.right]) for cp in spec.couplings()]
    system = QuadraticSystem.from_blocks(A, terms)
    if initial_state is None:
        x0 = np.zeros(m)
    else:
        x0 = basis.stack(basis.project(lift_fields(spec, initial_state.fields)))
    return QuadraticROM(spec, basis, dict(operators), dict(tensors), system, x0)


def simulate_quadratic(system: QuadraticSystem, x0: np.ndarray, dt: float, n_steps: int,
                       stepper: str = "kahan", opts: NewtonOptions = NewtonOptions(),
                       backend: Optional[str] = None) -> Tuple[np.ndarray, np.ndarray]:
    if stepper == "kahan":
        X = kernels.kahan_trajectory(system, x0, dt, n_steps, backend)
    elif stepper == "midpoint":
        X = kernels.midpoint_trajectory(system, x0, dt, n_steps, opts, backend)
    else:
        raise ValueError(f"unknown stepper {stepper!r}; choose from {STEPPERS}")
    return dt * np.arange(n_steps + 1), X


def simulate_rom(rom: QuadraticROM, dt: float, T: float, stepper: str = "kahan",
                 x0: Optional[np.ndarray] = None, opts: NewtonOptions = NewtonOptions(),
                 backend: Optional[str] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Integrate the ROM over ``[0, T]``; returns ``(times, X)`` with ``X`` of shape ``(m, K)``."""
    x0 = rom.x0 if x0 is None else x0
    return simulate_quadratic(rom.system, x0, dt, n_steps_for(T, dt), stepper, opts, backend)


def perturbed_lifted_energy(rom: QuadraticROM, x: np.ndarray):
    """Quadratic invariant of the learned ROM; vectorized over columns of ``x``."""
    f = rom.unstack(x)
    ops = rom.operators

    def dot(a, b):
        return np.sum(a * b, axis=0)

    if rom.problem is Problem.KGZ_2D:
        E = (dot(f["p1"], f["p1"]) + dot(f["p2"], f["p2"])
             + dot(f["q1"], f["q1"]) - dot(f["q1"], ops["D_q1"] @ f["q1"])
             + dot(f["q2"], f["q2"]) - dot(f["q2"], ops["D_q2"] @ f["q2"])
             - 0.5 * dot(f["varphi"], ops["D_phi"] @ f["varphi"])
             + 0.5 * dot(f["phi"], f["phi"]) + dot(f["phi"], f["w"]) + 0.5 * dot(f["w"], f["w"]))
    else:
        w1 = f[rom.spec.aux_names[0]]
        E = (0.5 * dot(f["p"], f["p"]) - 0.5 * dot(f["q"], ops["D"] @ f["q"])
             + rom.spec.energy_weight * dot(w1, w1))
    return float(E) if np.ndim(E) == 0 else E


def intrusive_operators(spec: LiftingSpec, model: ConservativeFOM,
                        basis: ReducedBasis) -> Dict[str, np.ndarray]:
    """Galerkin projections of the linear operators (for comparison and bounds)."""
    D = model.D
    Phi = basis.block("q1" if spec.problem is Problem.KGZ_2D else "q")
    DPhi = Phi.T @ (D @ Phi)
    DPhi = 0.5 * (DPhi + DPhi.T)
    if spec.problem is Problem.KGZ_2D:
        V = basis.block("varphi")
        DV = V.T @ (D @ V)
        return {"D_q1": DPhi, "D_q2": DPhi.copy(), "D_phi": 0.5 * (DV + DV.T)}
    return {"D": DPhi}


# ---- baselines ---------------------------------------------------------------
@dataclass
class HOpInfROM:
    """Canonical Hamiltonian ROM ``q' = D_q p``, ``p' = D_p q - Phi^T f(Phi q)``.

    The nonlinearity is evaluated at full dimension every Newton iteration.
    """

    model: ConservativeFOM
    Phi: np.ndarray
    D_q: np.ndarray
    D_p: np.ndarray
    x0: np.ndarray
    _F: Callable = field(init=False, repr=False)

    def __post_init__(self):
        self._F = reduced_nonlinearity(self.model, self.Phi)

    @property
    def r(self) -> int:
        return self.Phi.shape[1]

    def rhs(self, x):
        r = self.r
        q, p = x[:r], x[r:]
        return np.concatenate([self.D_q @ p, self.D_p @ q + self._F(q)])

    def jacobian(self, x):
        r = self.r
        q = x[:r]
        dF = -(self.Phi.T * self.model.df_non(self.Phi @ q)) @ self.Phi
        Z = np.zeros((r, r))
        return np.block([[Z, self.D_q], [self.D_p + dF, Z]])

    def energy(self, x):
        """``1/2 p.p - 1/2 q.D_p q + sum g(Phi q)`` (exact when ``D_q = I``)."""
        r = self.r
        q, p = x[:r], x[r:]
        return float(0.5 * p @ p - 0.5 * q @ (self.D_p @ q) + np.sum(self.model.g(self.Phi @ q)))


def make_hopinf_rom(model: ConservativeFOM, Phi: np.ndarray, ops: Mapping[str, np.ndarray],
                    initial_state: FOMState) -> HOpInfROM:
    x0 = np.concatenate([Phi.T @ initial_state["q"], Phi.T @ initial_state["p"]])
    return HOpInfROM(model, Phi, ops["D_q"], ops["D_p"], x0)


def simulate_hopinf(rom: HOpInfROM, dt: float, T: float,
                    opts: NewtonOptions = NewtonOptions()) -> Tuple[np.ndarray, np.ndarray]:
    step = lambda x: implicit_midpoint_step(rom.rhs, rom.jacobian, x, dt, opts)  # noqa: E731
    return integrate(step, rom.x0, dt, n_steps_for(T, dt))


def standard_system(A: np.ndarray, Hc: np.ndarray) -> QuadraticSystem:
    """Quadratic system for ``y' = A y + Hc kron2c(y)``."""
    i, j = quadratic_index_pairs(A.shape[0])
    rows, cols = np.nonzero(Hc)
    return QuadraticSystem(A, rows, i[cols], j[cols], Hc[rows, cols])


@dataclass
class StandardROM:
    basis: ReducedBasis
    A: np.ndarray
    Hc: np.ndarray
    system: QuadraticSystem
    x0: np.ndarray

    def rhs(self, x):
        return self.A @ x + self.Hc @ kron2c(x[:, None])[:, 0]


def make_standard_rom(spec: LiftingSpec, basis: ReducedBasis, A: np.ndarray, Hc: np.ndarray,
                      initial_state: FOMState) -> StandardROM:
    x0 = basis.stack(basis.project(lift_fields(spec, initial_state.fields)))
    return StandardROM(basis, A, Hc, standard_system(A, Hc), x0)


# ---- diagnostics ---------------------------------------------------------------
def relative_state_error(Q: np.ndarray, Phi: np.ndarray, Qhat: np.ndarray) -> float:
    """``||Q - Phi Qhat||_F^2 / ||Q||_F^2`` (ratio of squared norms)."""
    if Q.shape[1] != Qhat.shape[1]:
        raise ValueError("reference and reduced trajectories need the same number of columns")
    ref = float(np.sum(Q * Q))
    if ref == 0.0:
        raise ValueError("reference trajectory is identically zero")
    R = Q - Phi @ Qhat
    return float(np.sum(R * R)) / ref


def reconstruct_fom(model: ConservativeFOM, basis: ReducedBasis,
                    reduced: Mapping[str, np.ndarray]) -> np.ndarray:
    """Stacked FOM states ``(model.dim, K)`` from reduced fields."""
    return np.concatenate([basis.block(name) @ reduced[name] for name in model.fields], axis=0)


def fom_energy_error(model: ConservativeFOM, basis: ReducedBasis, X: np.ndarray) -> np.ndarray:
    """``|E(V x(t)) - E(V x(0))|`` for a stacked reduced trajectory ``X``."""
    Y = reconstruct_fom(model, basis, basis.unstack(X))
    E = model.energy_series(Y)
    return np.abs(E - E[0])


def hopinf_energy_error(model: ConservativeFOM, Phi: np.ndarray, X: np.ndarray) -> np.ndarray:
    r = Phi.shape[1]
    E = model.energy_series(np.vstack([Phi @ X[:r], Phi @ X[r:]]))
    return np.abs(E - E[0])


def efficacy(train_error: float, seconds: float) -> float:
    if not (train_error > 0 and seconds > 0):
        raise ValueError("efficacy needs a positive error and a positive wall-clock time")
    return 1.0 / (train_error * seconds)


def mean_wall_clock(fn: Callable[[], object], repeats: int = 20) -> float:
    """Mean seconds of ``fn()`` over ``repeats`` calls."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.mean(times))


@dataclass
class DiagnosticsReport:
    problem: str
    method: str
    r: int
    train_error: float
    test_error: float = float("nan")
    max_energy_error: float = float("nan")
    seconds: float = float("nan")
    efficacy: float = float("nan")
    energy_times: Optional[np.ndarray] = field(default=None, repr=False)
    energy_error: Optional[np.ndarray] = field(default=None, repr=False)
    lifted_energy_drift: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("train_error", "test_error", "max_energy_error"):
            v = getattr(self, name)
            if v < 0:
                raise ValueError(f"{name} must be nonnegative")
        if np.isnan(self.efficacy) and self.train_error > 0 and self.seconds > 0:
            self.efficacy = efficacy(self.train_error, self.seconds)

    ROW_FIELDS = ("problem", "method", "r", "train_error", "test_error", "max_energy_error",
                  "seconds", "efficacy")

    def row(self) -> List:
        return [getattr(self, k) for k in self.ROW_FIELDS]
