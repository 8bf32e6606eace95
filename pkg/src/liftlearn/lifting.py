"""Energy-quadratizing lifts and analytically reduced quadratic terms.

For the canonical wave problems the lifted system reads::

    q'   = p
    p'   = D q + c_p * (w_a * w_b)
    w_j' = (alpha_j q + sum_i alpha_ji w_i) * p

with the quadratic energy ``1/2 p.p - 1/2 q.D q + weight * w_1.w_1``. The
Klein-Gordon-Zakharov lift (``w = q1^2 + q2^2``) is handled separately since
that system is not canonical.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np

from .pde_bench import ConservativeFOM, FOMState, Problem


@dataclass(frozen=True)
class Coupling:
    """One quadratic term ``x'[out] += H(x[left], x[right])`` of a reduced model."""

    tensor: str
    out: str
    left: str
    right: str


@dataclass(frozen=True)
class LiftingSpec:
    problem: Problem
    aux_names: Tuple[str, ...]
    aux_map: Callable[[Mapping[str, np.ndarray]], Dict[str, np.ndarray]] = field(repr=False)
    # canonical problems only
    p_coupling: Optional[Tuple[float, int, int]] = None
    alpha_q: Tuple[float, ...] = ()
    alpha_w: Tuple[Tuple[float, ...], ...] = ()
    energy_weight: float = 1.0

    def __post_init__(self):
        if self.problem is Problem.KGZ_2D:
            return
        k = len(self.aux_names)
        if len(self.alpha_q) != k or len(self.alpha_w) != k or any(len(r) != k for r in self.alpha_w):
            raise ValueError("alpha coefficients must be given for every auxiliary variable")
        for j in range(1, k):
            if self.alpha_q[j] == 0 and not any(self.alpha_w[j]):
                raise ValueError(f"auxiliary {self.aux_names[j]!r} has all-zero dynamics coefficients")

    @property
    def k(self) -> int:
        return len(self.aux_names)

    @property
    def fom_fields(self) -> Tuple[str, ...]:
        if self.problem is Problem.KGZ_2D:
            return ("q1", "q2", "p1", "p2", "varphi", "phi")
        return ("q", "p")

    @property
    def lifted_fields(self) -> Tuple[str, ...]:
        return self.fom_fields + self.aux_names

    def couplings(self) -> List[Coupling]:
        """Quadratic terms of the reduced model, in evaluation order."""
        if self.problem is Problem.KGZ_2D:
            return [
                Coupling("H_p", "p1", "phi", "q1"), Coupling("H_p", "p1", "w", "q1"),
                Coupling("H_p", "p2", "phi", "q2"), Coupling("H_p", "p2", "w", "q2"),
                Coupling("H_w", "w", "q1", "p1"), Coupling("H_w", "w", "q2", "p2"),
            ]
        _, a, b = self.p_coupling
        out = [Coupling("H_p", "p", self.aux_names[a], self.aux_names[b])]
        for j, wj in enumerate(self.aux_names):
            if self.alpha_q[j]:
                out.append(Coupling(f"H_{wj}_q", wj, "q", "p"))
            for i, wi in enumerate(self.aux_names):
                if self.alpha_w[j][i]:
                    out.append(Coupling(self._aux_tensor_name(j, i), wj, wi, "p"))
        return out

    def _aux_tensor_name(self, j: int, i: int) -> str:
        n_terms = sum(1 for a in self.alpha_w[j] if a) + (1 if self.alpha_q[j] else 0)
        if j == 0 and n_terms == 1:
            return f"H_{self.aux_names[0]}"
        return f"H_{self.aux_names[j]}_{i + 1}"


def _sg_aux(f):
    q = f["q"]
    return {"w1": np.sin(0.5 * q), "w2": np.cos(0.5 * q)}


def _exp_aux(f):
    return {"w": np.exp(-0.5 * f["q"])}


def _kgz_aux(f):
    return {"w": f["q1"] ** 2 + f["q2"] ** 2}


def make_lifting(problem: Problem | str) -> LiftingSpec:
    problem = Problem(problem)
    if problem in (Problem.SINE_GORDON_1D, Problem.SINE_GORDON_2D):
        # w1 = sin(q/2), w2 = cos(q/2): 1 - cos q = 2 w1^2, sin q = 2 w1 w2
        return LiftingSpec(problem, ("w1", "w2"), _sg_aux, p_coupling=(-2.0, 0, 1),
                           alpha_q=(0.0, 0.0), alpha_w=((0.0, 0.5), (-0.5, 0.0)),
                           energy_weight=2.0)
    if problem is Problem.EXP_WAVE_1D:
        return LiftingSpec(problem, ("w",), _exp_aux, p_coupling=(1.0, 0, 0),
                           alpha_q=(0.0,), alpha_w=((-0.5,),), energy_weight=1.0)
    return LiftingSpec(problem, ("w",), _kgz_aux)


def lift_fields(spec: LiftingSpec, fields: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
    """Append auxiliary fields; works on vectors and on snapshot matrices alike."""
    out = {name: fields[name] for name in spec.fom_fields}
    out.update(spec.aux_map(fields))
    return out


def lift_state(spec: LiftingSpec, state: FOMState) -> FOMState:
    return FOMState(lift_fields(spec, state.fields), state.t)


def lifted_rhs_fields(spec: LiftingSpec, D, f: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
    if spec.problem is Problem.KGZ_2D:
        q1, q2, p1, p2, phi, w = f["q1"], f["q2"], f["p1"], f["p2"], f["phi"], f["w"]
        return {
            "q1": p1, "q2": p2,
            "p1": D @ q1 - q1 - phi * q1 - w * q1,
            "p2": D @ q2 - q2 - phi * q2 - w * q2,
            "varphi": phi + w,
            "phi": D @ f["varphi"],
            "w": 2.0 * q1 * p1 + 2.0 * q2 * p2,
        }
    q, p = f["q"], f["p"]
    ws = [f[name] for name in spec.aux_names]
    c, a, b = spec.p_coupling
    out = {"q": p, "p": D @ q + c * ws[a] * ws[b]}
    for j, name in enumerate(spec.aux_names):
        s = spec.alpha_q[j] * q
        for i in range(spec.k):
            if spec.alpha_w[j][i]:
                s = s + spec.alpha_w[j][i] * ws[i]
        out[name] = s * p
    return out


def lifted_rhs(spec: LiftingSpec, model: ConservativeFOM, state: FOMState) -> FOMState:
    """Right-hand side of the lifted quadratic FOM (used for checks only)."""
    return FOMState(lifted_rhs_fields(spec, model.D, state.fields), state.t)


def lifted_energy_fields(spec: LiftingSpec, D, f: Mapping[str, np.ndarray]) -> float:
    if spec.problem is Problem.KGZ_2D:
        q1, q2, p1, p2, vphi, phi, w = (f[k] for k in ("q1", "q2", "p1", "p2", "varphi", "phi", "w"))
        return float(
            p1 @ p1 + p2 @ p2 + q1 @ q1 - q1 @ (D @ q1) + q2 @ q2 - q2 @ (D @ q2)
            - 0.5 * vphi @ (D @ vphi) + 0.5 * phi @ phi + phi @ w + 0.5 * w @ w)
    q, p, w1 = f["q"], f["p"], f[spec.aux_names[0]]
    return float(0.5 * p @ p - 0.5 * q @ (D @ q) + spec.energy_weight * (w1 @ w1))


def lifted_energy(spec: LiftingSpec, model: ConservativeFOM, state: FOMState) -> float:
    return lifted_energy_fields(spec, model.D, state.fields)


# ---- reduced quadratic tensors ----------------------------------------------------
@dataclass
class QuadraticTensor:
    """Dense ``H[i, j, l]`` acting as ``apply(a, b)_i = sum_jl H[i,j,l] a_j b_l``."""

    H: np.ndarray

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.H.shape

    def apply(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Columnwise when ``a`` and ``b`` are matrices with matching columns."""
        if a.ndim == 1:
            return np.einsum("ijl,j,l->i", self.H, a, b)
        return np.einsum("ijl,jk,lk->ik", self.H, a, b, optimize=True)


def build_reduced_tensor(out_basis: np.ndarray, left_basis: np.ndarray,
                         right_basis: np.ndarray, scale: float = 1.0) -> QuadraticTensor:
    """``H[i,j,l] = scale * sum_m out[m,i] left[m,j] right[m,l]``.

    Equivalent to ``apply(a, b) = scale * out.T @ ((left @ a) * (right @ b))``.
    """
    n = out_basis.shape[0]
    if left_basis.shape[0] != n or right_basis.shape[0] != n:
        raise ValueError("bases must share the same number of rows")
    r_out, r_a, r_b = out_basis.shape[1], left_basis.shape[1], right_basis.shape[1]
    # contract one output index at a time: fixed summation order, O(n r_a r_b) memory
    H = np.empty((r_out, r_a, r_b))
    for i in range(r_out):
        H[i] = (left_basis * out_basis[:, i:i + 1]).T @ right_basis
    if scale != 1.0:
        H *= scale
    return QuadraticTensor(H)


def tensor_scales(spec: LiftingSpec) -> Dict[str, float]:
    """Scalar coefficient carried by each named reduced tensor."""
    if spec.problem is Problem.KGZ_2D:
        return {"H_p": -1.0, "H_w": 2.0}
    scales = {"H_p": spec.p_coupling[0]}
    for j, wj in enumerate(spec.aux_names):
        if spec.alpha_q[j]:
            scales[f"H_{wj}_q"] = spec.alpha_q[j]
        for i in range(spec.k):
            if spec.alpha_w[j][i]:
                scales[spec._aux_tensor_name(j, i)] = spec.alpha_w[j][i]
    return scales


def rom_quadratic_terms(spec: LiftingSpec, basis) -> Dict[str, QuadraticTensor]:
    """Analytic reduced tensors for the problem's reduced model.

    ``basis`` must provide ``block(field) -> (n, r) array`` (see
    :class:`liftlearn.reduction.ReducedBasis`).
    """
    if spec.problem not in tuple(Problem):
        raise ValueError(f"unknown problem {spec.problem!r}")
    scales = tensor_scales(spec)
    tensors: Dict[str, QuadraticTensor] = {}
    for cp in spec.couplings():
        if cp.tensor in tensors:
            continue
        tensors[cp.tensor] = build_reduced_tensor(
            basis.block(cp.out), basis.block(cp.left), basis.block(cp.right), scales[cp.tensor])
    return tensors
