"""End-to-end experiment steps shared by the CLI and the acceptance suite."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .integrators import chord_midpoint_stepper, integrate
from .lifting import LiftingSpec, lift_fields, make_lifting, rom_quadratic_terms
from .opinf import InferenceReport, infer_hopinf, infer_sp_liftlearn, infer_standard_liftlearn
from .pde_bench import ConservativeFOM, FOMState, Problem, initial_condition, make_fom
from .reduction import ReducedBasis, SnapshotSet, build_basis, project_snapshots
from .rom import (DiagnosticsReport, assemble_rom, fom_energy_error, hopinf_energy_error,
                  intrusive_operators, make_hopinf_rom, make_standard_rom, mean_wall_clock,
                  n_steps_for, perturbed_lifted_energy, simulate_hopinf, simulate_quadratic,
                  simulate_rom)

METHODS = ("sp-liftlearn", "hopinf", "standard-liftlearn", "intrusive-lifting-test")


@dataclass
class FOMRun:
    model: ConservativeFOM
    spec: LiftingSpec
    snapshots: SnapshotSet  # lifted fields, every stride-th step
    seconds: float
    initial: FOMState
    dt: float
    stride: int = 1


def simulate_fom(problem, points=None, dt: float = 0.005, T: float = 10.0,
                 stride: int = 1) -> FOMRun:
    """Implicit-midpoint FOM trajectory on ``[0, T]`` with lifted snapshots."""
    model = make_fom(problem, points)
    spec = make_lifting(model.problem)
    ic = initial_condition(model)
    step = chord_midpoint_stepper(model.rhs, model.linear_part(), dt)
    t0 = time.perf_counter()
    times, X = integrate(step, model.pack(ic), dt, n_steps_for(T, dt))
    seconds = time.perf_counter() - t0
    X, times = X[:, ::stride], times[::stride]
    fields = lift_fields(spec, model.split(X))
    return FOMRun(model, spec, SnapshotSet(fields, times, model.problem), seconds, ic, dt, stride)


def train_index(snaps: SnapshotSet, T_train: float) -> int:
    """Number of snapshot columns inside ``[0, T_train]``."""
    return n_steps_for(T_train, snaps.dt) + 1


@dataclass
class FittedModel:
    method: str
    r: int
    rom: object
    basis: ReducedBasis
    reports: Dict[str, InferenceReport] = field(default_factory=dict)


def fit(run: FOMRun, method: str, r: int, T_train: float, reg: float = 0.0,
        basis: Optional[ReducedBasis] = None) -> FittedModel:
    """Build the basis from training data and learn the reduced model."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    train = run.snapshots.window(0, train_index(run.snapshots, T_train))
    if basis is None:
        basis = build_basis(train, run.spec.aux_names, r)
    elif basis.r != r:
        basis = basis.truncate(r)
    spec, model = run.spec, run.model
    if method in ("sp-liftlearn", "intrusive-lifting-test"):
        tensors = rom_quadratic_terms(spec, basis)
        if method == "sp-liftlearn":
            data = project_snapshots(basis, train)
            ops, reports = infer_sp_liftlearn(spec, data, tensors, reg)
        else:
            ops, reports = intrusive_operators(spec, model, basis), {}
        rom = assemble_rom(spec, basis, ops, tensors, run.initial)
        return FittedModel(method, r, rom, basis, reports)
    if method == "hopinf":
        data = project_snapshots(basis, train, derivative_fields=("q", "p"))
        ops, reports = infer_hopinf(data, model, basis.block("q"), reg)
        return FittedModel(method, r, make_hopinf_rom(model, basis.block("q"), ops, run.initial),
                           basis, reports)
    data = project_snapshots(basis, train, derivative_fields=basis.fields)
    Y = basis.stack(data.states)
    Ydot = basis.stack(data.derivatives)
    A, Hc, report = infer_standard_liftlearn(Y, Ydot, reg)
    rom = make_standard_rom(spec, basis, A, Hc, run.initial)
    return FittedModel(method, r, rom, basis, {"standard": report})


def operators_of(fitted: FittedModel) -> Dict[str, np.ndarray]:
    """Learned (or projected) arrays that define the reduced model."""
    rom = fitted.rom
    if fitted.method == "hopinf":
        return {"D_q": rom.D_q, "D_p": rom.D_p}
    if fitted.method == "standard-liftlearn":
        return {"A": rom.A, "Hc": rom.Hc}
    out = dict(rom.operators)
    out.update({name: T.H for name, T in rom.tensors.items()})
    return out


def model_from_operators(run: FOMRun, method: str, basis: ReducedBasis,
                         arrays: Dict[str, np.ndarray]) -> FittedModel:
    """Inverse of :func:`operators_of`."""
    from .lifting import QuadraticTensor

    if method == "hopinf":
        rom = make_hopinf_rom(run.model, basis.block("q"), arrays, run.initial)
    elif method == "standard-liftlearn":
        rom = make_standard_rom(run.spec, basis, arrays["A"], arrays["Hc"], run.initial)
    else:
        tensors = {k: QuadraticTensor(v) for k, v in arrays.items() if k.startswith("H_")}
        ops = {k: v for k, v in arrays.items() if not k.startswith("H_")}
        rom = assemble_rom(run.spec, basis, ops, tensors, run.initial)
    return FittedModel(method, basis.r, rom, basis)


def simulate(fitted: FittedModel, dt: float, T: float, stepper: str = "kahan"
             ) -> Tuple[np.ndarray, np.ndarray]:
    if fitted.method == "hopinf":
        return simulate_hopinf(fitted.rom, dt, T)
    if fitted.method == "standard-liftlearn":
        return simulate_quadratic(fitted.rom.system, fitted.rom.x0, dt, n_steps_for(T, dt), stepper)
    return simulate_rom(fitted.rom, dt, T, stepper)


def _position_fields(model: ConservativeFOM) -> Sequence[str]:
    return ("q1", "q2") if model.problem is Problem.KGZ_2D else ("q",)


def state_error(run: FOMRun, fitted: FittedModel, X: np.ndarray, start: int, stop: int) -> float:
    """Relative position-state error over snapshot columns ``start:stop``.

    ``X`` holds the reduced trajectory at every FOM step; snapshots may be strided.
    """
    stride = run.stride
    f = run.snapshots.fields
    Phi = fitted.basis.block(_position_fields(run.model)[0])
    r = fitted.basis.r
    errs_num, errs_den = 0.0, 0.0
    sl = fitted.basis.slices()
    for name in _position_fields(run.model):
        Q = f[name][:, start:stop]
        if fitted.method == "hopinf":
            Qh = X[:r, start * stride:stop * stride:stride]
        else:
            Qh = X[sl[name], start * stride:stop * stride:stride]
        R = Q - Phi @ Qh
        errs_num += float(np.sum(R * R))
        errs_den += float(np.sum(Q * Q))
    if errs_den == 0.0:
        raise ValueError("reference trajectory is identically zero")
    return errs_num / errs_den


def energy_error(run: FOMRun, fitted: FittedModel, X: np.ndarray) -> np.ndarray:
    if fitted.method == "hopinf":
        return hopinf_energy_error(run.model, fitted.basis.block("q"), X)
    return fom_energy_error(run.model, fitted.basis, X)


def diagnose_trajectory(run: FOMRun, fitted: FittedModel, times: np.ndarray, X: np.ndarray,
                        T_train: float, seconds: float = float("nan")) -> DiagnosticsReport:
    """Errors of a reduced trajectory sampled at every FOM step."""
    k_train = train_index(run.snapshots, T_train)
    train = state_error(run, fitted, X, 0, k_train)
    K = min(run.snapshots.K, (X.shape[1] - 1) // run.stride + 1)
    test = state_error(run, fitted, X, k_train - 1, K) if K > k_train else float("nan")
    E = energy_error(run, fitted, X)
    rep = DiagnosticsReport(run.model.problem.value, fitted.method, fitted.r, train, test,
                            float(np.max(E)), seconds, energy_times=times, energy_error=E)
    if fitted.method in ("sp-liftlearn", "intrusive-lifting-test"):
        El = perturbed_lifted_energy(fitted.rom, X)
        rep.lifted_energy_drift = np.abs(El - El[0])
    return rep


def evaluate(run: FOMRun, fitted: FittedModel, dt: float, T_train: float,
             T_end: Optional[float] = None, stepper: str = "kahan",
             repeats: int = 0) -> DiagnosticsReport:
    """Simulate over ``[0, T_end]`` and diagnose; ``repeats > 0`` also times the training run."""
    if abs(dt * run.stride - run.snapshots.dt) > 1e-12:
        raise ValueError("ROM step must equal the FOM step")
    T_end = float(run.snapshots.times[-1]) if T_end is None else T_end
    times, X = simulate(fitted, dt, T_end, stepper)
    seconds = float("nan")
    if repeats:
        seconds = mean_wall_clock(lambda: simulate(fitted, dt, T_train, stepper), repeats)
    return diagnose_trajectory(run, fitted, times, X, T_train, seconds)
