"""Operator inference: symmetric-constrained and unconstrained least squares."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Mapping, Optional, Tuple

import numpy as np
import scipy.linalg as la

from .lifting import LiftingSpec, QuadraticTensor
from .pde_bench import ConservativeFOM, Problem
from .reduction import ReducedData

DEGENERACY_RTOL = 1e-12


class DegenerateGram(ValueError):
    def __init__(self, msg: str, equation: Optional[str] = None):
        super().__init__(msg if equation is None else f"{equation}: {msg}")
        self.equation = equation


class NotCanonical(ValueError):
    pass


@dataclass
class InferenceReport:
    residual: float
    gram_eig_min: float
    gram_eig_max: float
    stationarity: float = 0.0
    notes: Dict[str, str] = field(default_factory=dict)

    def as_dict(self) -> Dict[str, float]:
        return {"residual": self.residual, "gram_eig_min": self.gram_eig_min,
                "gram_eig_max": self.gram_eig_max, "stationarity": self.stationarity}


def symmetric_lstsq(X: np.ndarray, B: np.ndarray, reg: float = 0.0) -> Tuple[np.ndarray, InferenceReport]:
    """Symmetric minimizer of ``||D X - B||_F^2 + reg ||D||_F^2``.

    Stationarity gives the Lyapunov equation ``D G + G D = B X^T + X B^T``
    with ``G = X X^T + reg I``, solved entrywise in the eigenbasis of ``G``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if X.shape != B.shape:
        raise ValueError(f"X {X.shape} and B {B.shape} must have equal shapes")
    if reg < 0:
        raise ValueError("regularization must be nonnegative")
    if not np.any(X):
        raise DegenerateGram("state data matrix is identically zero")
    r = X.shape[0]
    G = X @ X.T + reg * np.eye(r)
    lam, U = la.eigh(G)
    C = B @ X.T
    C = C + C.T
    denom = lam[:, None] + lam[None, :]
    scale = np.max(np.abs(denom))
    if reg == 0 and np.min(denom) <= DEGENERACY_RTOL * scale:
        raise DegenerateGram(
            f"Gram matrix is rank deficient (eigenvalue sum {np.min(denom):.3e} vs max {scale:.3e}); "
            "regularize or reduce r")
    Ct = U.T @ C @ U
    # rounding in the rotation breaks symmetry when G is badly conditioned
    Dt = 0.5 * (Ct + Ct.T) / denom
    D = U @ Dt @ U.T
    D = 0.5 * (D + D.T)
    R = D @ X - B
    grad = R @ X.T
    stat = np.linalg.norm(0.5 * (grad + grad.T) + reg * D) / max(np.linalg.norm(B @ X.T), 1e-300)
    return D, InferenceReport(float(np.linalg.norm(R)), float(lam[0]), float(lam[-1]), float(stat))


def _quadratic_contribution(spec: LiftingSpec, tensors: Mapping[str, QuadraticTensor],
                            states: Mapping[str, np.ndarray], out: str) -> np.ndarray:
    total = 0.0
    for cp in spec.couplings():
        if cp.out == out:
            total = total + tensors[cp.tensor].apply(states[cp.left], states[cp.right])
    return total


def infer_sp_liftlearn(spec: LiftingSpec, data: ReducedData, tensors: Mapping[str, QuadraticTensor],
                       reg: float = 0.0) -> Tuple[Dict[str, np.ndarray], Dict[str, InferenceReport]]:
    """Learn the symmetric linear blocks with the analytic quadratic terms fixed.

    Wave problems learn ``D`` from the momentum equation. KGZ learns
    ``D_q1``, ``D_q2`` and ``D_phi``; the structural identity terms are moved
    to the data side first.
    """
    S, dS = data.states, data.derivatives

    def solve(name, X, B):
        try:
            return symmetric_lstsq(X, B, reg)
        except DegenerateGram as exc:
            raise DegenerateGram(str(exc), equation=name) from exc

    ops, reports = {}, {}
    if spec.problem is not Problem.KGZ_2D:
        B = dS["p"] - _quadratic_contribution(spec, tensors, S, "p")
        ops["D"], reports["D"] = solve("D", S["q"], B)
        return ops, reports

    for i in ("1", "2"):
        q, p = S["q" + i], "p" + i
        name = "D_q" + i
        if i == "2" and np.linalg.norm(q) <= 1e-14 * max(np.linalg.norm(S["q1"]), 1e-300):
            # q2 stays identically zero for real-valued initial data
            ops[name] = ops["D_q1"].copy()
            rep = InferenceReport(0.0, 0.0, 0.0)
            rep.notes["tied"] = "q2 data identically zero; D_q2 tied to D_q1"
            reports[name] = rep
            continue
        B = dS[p] + q - _quadratic_contribution(spec, tensors, S, p)
        ops[name], reports[name] = solve(name, q, B)
    ops["D_phi"], reports["D_phi"] = solve("D_phi", S["varphi"], dS["phi"])
    return ops, reports


def reduced_nonlinearity(model: ConservativeFOM, Phi: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    """``q_hat -> -Phi^T f_non(Phi q_hat)``, evaluated at full dimension."""
    if not model.canonical:
        raise NotCanonical(f"{model.problem.value} has no canonical Hamiltonian form")

    def F(Qh):
        return -Phi.T @ model.f_non(Phi @ Qh)

    return F


def infer_hopinf(data: ReducedData, model: ConservativeFOM, Phi: np.ndarray,
                 reg: float = 0.0) -> Tuple[Dict[str, np.ndarray], Dict[str, InferenceReport]]:
    """Two separate symmetric fits for ``q' = D_q p``, ``p' = D_p q + F(q)``."""
    if not model.canonical:
        raise NotCanonical("HOpInf requires a canonical Hamiltonian FOM; KGZ is not")
    for name in ("q", "p"):
        if name not in data.derivatives:
            raise ValueError(f"HOpInf needs time-derivative data for {name!r}")
    F = reduced_nonlinearity(model, Phi)
    S, dS = data.states, data.derivatives
    ops, reports = {}, {}
    try:
        ops["D_q"], reports["D_q"] = symmetric_lstsq(S["p"], dS["q"], reg)
    except DegenerateGram as exc:
        raise DegenerateGram(str(exc), equation="D_q") from exc
    try:
        ops["D_p"], reports["D_p"] = symmetric_lstsq(S["q"], dS["p"] - F(S["q"]), reg)
    except DegenerateGram as exc:
        raise DegenerateGram(str(exc), equation="D_p") from exc
    return ops, reports


# ---- standard (unconstrained) Lift & Learn ------------------------------------------
def quadratic_index_pairs(r: int) -> Tuple[np.ndarray, np.ndarray]:
    """Index pairs ``(i, j)``, ``i <= j``, of the non-redundant Kronecker columns."""
    return np.triu_indices(r)


def kron2c(Y: np.ndarray) -> np.ndarray:
    """Compact quadratic features ``y_i y_j`` (``i <= j``) of each column of ``Y``."""
    i, j = quadratic_index_pairs(Y.shape[0])
    return Y[i] * Y[j]


def infer_standard_liftlearn(Y: np.ndarray, Ydot: np.ndarray, reg: float = 0.0
                             ) -> Tuple[np.ndarray, np.ndarray, InferenceReport]:
    """Unconstrained fit of ``y' = A y + Hc kron2c(y)``.

    Tikhonov-regularized normal equations, solved through the SVD of the data
    matrix to avoid squaring its condition number.
    """
    rbar, K = Y.shape
    Dm = np.hstack([Y.T, kron2c(Y).T])
    U, s, Vt = la.svd(Dm, full_matrices=False)
    if reg == 0 and (s.size == 0 or s[-1] <= DEGENERACY_RTOL * s[0]):
        raise DegenerateGram(
            f"data matrix is rank deficient (sigma_min/sigma_max = {s[-1] / s[0]:.3e}); regularize")
    filt = s / (s * s + reg)
    O = (Vt.T * filt) @ (U.T @ Ydot.T)
    A = O[:rbar].T
    Hc = O[rbar:].T
    resid = float(np.linalg.norm(Ydot - A @ Y - Hc @ kron2c(Y)))
    return A, Hc, InferenceReport(resid, float(s[-1] ** 2), float(s[0] ** 2))
