"""Snapshot handling, PSD/POD bases and projection to reduced coordinates."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as la

from .integrators import SeriesTooShort, central_diff_8
from .pde_bench import Problem

GRAM_SVD_THRESHOLD = 50_000


@dataclass
class SnapshotSet:
    fields: Dict[str, np.ndarray]
    times: np.ndarray
    problem: Problem

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        K = {M.shape[1] for M in self.fields.values()}
        if K != {self.times.size}:
            raise ValueError("every snapshot matrix needs one column per sample time")
        if self.times.size > 1:
            dts = np.diff(self.times)
            if np.any(dts <= 0):
                raise ValueError("sample times must be strictly increasing")
            if not np.allclose(dts, dts[0], rtol=1e-9, atol=0):
                raise ValueError("sample times must be uniformly spaced")

    @property
    def K(self) -> int:
        return self.times.size

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def window(self, start: int, stop: int) -> "SnapshotSet":
        """Columns ``start:stop`` (python slice semantics)."""
        return SnapshotSet({k: v[:, start:stop] for k, v in self.fields.items()},
                           self.times[start:stop], self.problem)


def _fix_signs(U: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(U), axis=0)
    s = np.sign(U[idx, np.arange(U.shape[1])])
    s[s == 0] = 1.0
    return U * s


def _leading_left_singular_vectors(Y: np.ndarray, r: int) -> Tuple[np.ndarray, np.ndarray]:
    n, K = Y.shape
    if r < 1 or r > min(n, K):
        raise ValueError(f"requested rank {r} exceeds min(n, K) = {min(n, K)}")
    if not np.any(Y):
        raise ValueError("snapshot matrix is identically zero")
    if n > GRAM_SVD_THRESHOLD:
        # method of snapshots: eigen-decompose the K x K Gram matrix
        G = Y.T @ Y
        lam, W = la.eigh(G)
        order = np.argsort(lam)[::-1]
        lam, W = lam[order], W[:, order]
        sig = np.sqrt(np.clip(lam, 0.0, None))
        U = (Y @ W[:, :r]) / sig[:r]
        # one re-orthonormalization pass removes Gram-squaring round-off
        U, _ = np.linalg.qr(U)
        U = _fix_signs(U)
        return U, sig
    U, sig, _ = la.svd(Y, full_matrices=False, lapack_driver="gesdd")
    return _fix_signs(U[:, :r]), sig


def cotangent_lift_psd(Q: np.ndarray, P: np.ndarray, r: int) -> np.ndarray:
    """PSD basis: leading ``r`` left singular vectors of ``[Q P]``."""
    if Q.shape[0] != P.shape[0]:
        raise ValueError("Q and P must have the same number of rows")
    U, _ = _leading_left_singular_vectors(np.hstack([Q, P]), r)
    return U


def pod_basis(W: np.ndarray, r: int) -> np.ndarray:
    U, _ = _leading_left_singular_vectors(np.asarray(W), r)
    return U


def singular_values(Y: np.ndarray) -> np.ndarray:
    return la.svd(Y, compute_uv=False)


# field -> block assignment per problem
def block_map(problem: Problem | str, aux_names: Sequence[str]) -> Dict[str, str]:
    problem = Problem(problem)
    if problem is Problem.KGZ_2D:
        return {"q1": "Phi", "q2": "Phi", "p1": "Phi", "p2": "Phi",
                "varphi": "V", "phi": "V", "w": "V"}
    out = {"q": "Phi", "p": "Phi"}
    if len(aux_names) == 1:
        out[aux_names[0]] = "V"
    else:
        out.update({name: f"V{i + 1}" for i, name in enumerate(aux_names)})
    return out


@dataclass
class ReducedBasis:
    """Block-diagonal basis ``blkdiag(Phi, Phi, V_1, ..., V_k)``."""

    problem: Problem
    blocks: Dict[str, np.ndarray]
    field_map: Dict[str, str]

    def __post_init__(self):
        ns = {B.shape[0] for B in self.blocks.values()}
        rs = {B.shape[1] for B in self.blocks.values()}
        if len(ns) != 1:
            raise ValueError("all basis blocks must have the same number of rows")
        if len(rs) != 1:
            raise ValueError("all basis blocks must have the same number of columns")
        missing = set(self.field_map.values()) - set(self.blocks)
        if missing:
            raise ValueError(f"field map references missing blocks {sorted(missing)}")

    @property
    def fields(self) -> Tuple[str, ...]:
        return tuple(self.field_map)

    @property
    def r(self) -> int:
        return next(iter(self.blocks.values())).shape[1]

    @property
    def n(self) -> int:
        return next(iter(self.blocks.values())).shape[0]

    @property
    def total_dim(self) -> int:
        return self.r * len(self.field_map)

    def block(self, name: str) -> np.ndarray:
        return self.blocks[self.field_map[name]]

    def truncate(self, r: int) -> "ReducedBasis":
        if r > self.r:
            raise ValueError(f"cannot truncate rank-{self.r} basis to {r}")
        return ReducedBasis(self.problem, {k: B[:, :r] for k, B in self.blocks.items()},
                            dict(self.field_map))

    def slices(self) -> Dict[str, slice]:
        r = self.r
        return {name: slice(i * r, (i + 1) * r) for i, name in enumerate(self.field_map)}

    def project(self, fields: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
        return {name: self.block(name).T @ fields[name] for name in self.field_map}

    def reconstruct(self, reduced: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
        return {name: self.block(name) @ reduced[name] for name in self.field_map}

    def stack(self, reduced: Mapping[str, np.ndarray]) -> np.ndarray:
        return np.concatenate([reduced[name] for name in self.field_map], axis=0)

    def unstack(self, x: np.ndarray) -> Dict[str, np.ndarray]:
        return {name: x[sl] for name, sl in self.slices().items()}


def assemble_basis(problem: Problem | str, Phi: np.ndarray, Vs: Sequence[np.ndarray],
                   aux_names: Sequence[str]) -> ReducedBasis:
    problem = Problem(problem)
    fmap = block_map(problem, aux_names)
    blocks = {"Phi": Phi}
    if problem is Problem.KGZ_2D:
        if len(Vs) != 1:
            raise ValueError("KGZ uses a single POD block shared by varphi, phi and w")
        blocks["V"] = Vs[0]
    elif len(aux_names) == 1:
        if len(Vs) != 1:
            raise ValueError("expected one POD block")
        blocks["V"] = Vs[0]
    else:
        if len(Vs) != len(aux_names):
            raise ValueError(f"expected {len(aux_names)} POD blocks, got {len(Vs)}")
        blocks.update({f"V{i + 1}": V for i, V in enumerate(Vs)})
    return ReducedBasis(problem, blocks, fmap)


def build_basis(snaps: SnapshotSet, aux_names: Sequence[str], r: int) -> ReducedBasis:
    """PSD block from position/momentum snapshots, POD blocks for the rest."""
    f = snaps.fields
    if snaps.problem is Problem.KGZ_2D:
        Phi = cotangent_lift_psd(np.hstack([f["q1"], f["q2"]]), np.hstack([f["p1"], f["p2"]]), r)
        V = pod_basis(np.hstack([f["varphi"], f["phi"], f["w"]]), r)
        return assemble_basis(snaps.problem, Phi, [V], aux_names)
    Phi = cotangent_lift_psd(f["q"], f["p"], r)
    Vs = [pod_basis(f[name], r) for name in aux_names]
    return assemble_basis(snaps.problem, Phi, Vs, aux_names)


def learned_derivative_fields(problem: Problem | str) -> Tuple[str, ...]:
    if Problem(problem) is Problem.KGZ_2D:
        return ("p1", "p2", "phi")
    return ("p",)


@dataclass
class ReducedData:
    states: Dict[str, np.ndarray]
    derivatives: Dict[str, np.ndarray]
    index_range: Tuple[int, int]

    @property
    def K(self) -> int:
        return next(iter(self.states.values())).shape[1]


def project_snapshots(basis: ReducedBasis, snaps: SnapshotSet, dt: Optional[float] = None,
                      derivative_fields: Optional[Iterable[str]] = None) -> ReducedData:
    """Project every field and difference the requested ones in time.

    All matrices are trimmed to the samples where the eighth-order stencil
    applies (indices ``4..K-5``).
    """
    dt = snaps.dt if dt is None else dt
    if snaps.K < 9:
        raise SeriesTooShort(f"need at least 9 snapshots, got {snaps.K}")
    if derivative_fields is None:
        derivative_fields = learned_derivative_fields(basis.problem)
    reduced = basis.project(snaps.fields)
    derivs = {}
    lo, hi = 4, snaps.K - 5
    for name in derivative_fields:
        derivs[name], (lo, hi) = central_diff_8(reduced[name], dt)
    states = {name: M[:, lo:hi + 1] for name, M in reduced.items()}
    return ReducedData(states, derivs, (lo, hi))


def projection_error(V: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Per-column ``||w - V V^T w|| / ||w||``; NaN for zero columns."""
    norms = np.linalg.norm(W, axis=0)
    resid = np.linalg.norm(W - V @ (V.T @ W), axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        err = resid / norms
    err[norms == 0] = np.nan
    return err
