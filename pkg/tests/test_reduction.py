import numpy as np
import pytest

from liftlearn import reduction
from liftlearn.integrators import SeriesTooShort
from liftlearn.pde_bench import Problem
from liftlearn.reduction import (SnapshotSet, assemble_basis, build_basis, cotangent_lift_psd,
                                 pod_basis, project_snapshots, projection_error, singular_values)


def orthonormal(rng, n, r):
    return np.linalg.qr(rng.standard_normal((n, r)))[0]


def test_psd_orthonormal_and_deterministic(rng):
    Q, P = rng.standard_normal((2, 40, 15))
    Phi = cotangent_lift_psd(Q, P, 6)
    np.testing.assert_allclose(Phi.T @ Phi, np.eye(6), atol=1e-12)
    assert np.array_equal(Phi, cotangent_lift_psd(Q.copy(), P.copy(), 6))
    # sign convention: largest-magnitude entry of each column is positive
    idx = np.argmax(np.abs(Phi), axis=0)
    assert np.all(Phi[idx, np.arange(6)] > 0)


def test_psd_rank_one_exact(rng):
    u = rng.standard_normal(30)
    Q = np.outer(u, rng.standard_normal(8))
    Phi = cotangent_lift_psd(Q, Q, 1)
    assert np.max(np.abs(Q - Phi @ (Phi.T @ Q))) <= 1e-13


def test_psd_subspace_containment(rng):
    S = orthonormal(rng, 25, 3)
    Q, P = S @ rng.standard_normal((3, 10)), S @ rng.standard_normal((3, 10))
    Phi = cotangent_lift_psd(Q, P, 3)
    for M in (Q, P):
        assert np.max(np.abs(M - Phi @ (Phi.T @ M))) <= 1e-12


def test_psd_errors(rng):
    Q = rng.standard_normal((5, 2))
    with pytest.raises(ValueError):
        cotangent_lift_psd(Q, Q, 6)
    with pytest.raises(ValueError):
        cotangent_lift_psd(np.zeros((5, 3)), np.zeros((5, 3)), 1)
    with pytest.raises(ValueError):
        cotangent_lift_psd(Q, rng.standard_normal((4, 2)), 1)


def test_pod_tail_energy_matches_projection_error(rng):
    W = rng.standard_normal((30, 12)) @ np.diag(0.5 ** np.arange(12)) @ rng.standard_normal((12, 12))
    s = singular_values(W)
    prev = np.inf
    for r in range(1, 12):
        V = pod_basis(W, r)
        np.testing.assert_allclose(V.T @ V, np.eye(r), atol=1e-12)
        err = np.linalg.norm(W - V @ (V.T @ W)) / np.linalg.norm(W)
        tail = np.sqrt(np.sum(s[r:] ** 2) / np.sum(s ** 2))
        assert abs(err - tail) <= 1e-10
        assert err < prev
        prev = err


def test_pod_rank_one(rng):
    W = np.outer(rng.standard_normal(9), rng.standard_normal(4))
    V = pod_basis(W, 1)
    assert np.max(np.abs(W - V @ (V.T @ W))) <= 1e-13


def test_gram_path_matches_direct_svd(rng, monkeypatch):
    W = rng.standard_normal((60, 10))
    direct = pod_basis(W, 4)
    monkeypatch.setattr(reduction, "GRAM_SVD_THRESHOLD", 10)
    gram = pod_basis(W, 4)
    np.testing.assert_allclose(gram, direct, atol=1e-10)


@pytest.mark.parametrize("problem,aux,nV,factor", [
    (Problem.SINE_GORDON_1D, ("w1", "w2"), 2, 4),
    (Problem.EXP_WAVE_1D, ("w",), 1, 3),
    (Problem.KGZ_2D, ("w",), 1, 7),
])
def test_block_totals(problem, aux, nV, factor, rng):
    r = 3
    Phi = orthonormal(rng, 10, r)
    basis = assemble_basis(problem, Phi, [orthonormal(rng, 10, r) for _ in range(nV)], aux)
    assert basis.total_dim == factor * r
    assert basis.block("p" if problem is not Problem.KGZ_2D else "p2") is Phi


def test_assemble_rejects_mismatch(rng):
    with pytest.raises(ValueError):
        assemble_basis(Problem.EXP_WAVE_1D, orthonormal(rng, 10, 2), [orthonormal(rng, 9, 2)], ("w",))
    with pytest.raises(ValueError):
        assemble_basis(Problem.SINE_GORDON_1D, orthonormal(rng, 10, 2), [orthonormal(rng, 10, 2)],
                       ("w1", "w2"))


def snapshot_set(rng, n=6, K=20, const=False, problem=Problem.EXP_WAVE_1D):
    base = rng.standard_normal((n, 1))
    fields = {k: (np.repeat(base, K, axis=1) if const else rng.standard_normal((n, K)))
              for k in ("q", "p", "w")}
    return SnapshotSet(fields, 0.1 * np.arange(K), problem)


def test_project_identity_basis_and_trim(rng):
    snaps = snapshot_set(rng)
    I = np.eye(6)
    basis = assemble_basis(Problem.EXP_WAVE_1D, I, [I], ("w",))
    data = project_snapshots(basis, snaps)
    assert data.index_range == (4, 15) and data.K == 12 == snaps.K - 8
    np.testing.assert_array_equal(data.states["q"], snaps.fields["q"][:, 4:16])
    assert set(data.derivatives) == {"p"}


def test_projection_idempotent(rng):
    Phi = orthonormal(rng, 12, 3)
    Qh = rng.standard_normal((3, 5))
    np.testing.assert_allclose(Phi.T @ (Phi @ Qh), Qh, atol=1e-14)


def test_constant_snapshots_have_zero_derivatives(rng):
    snaps = snapshot_set(rng, const=True)
    basis = assemble_basis(Problem.EXP_WAVE_1D, orthonormal(rng, 6, 2), [orthonormal(rng, 6, 2)], ("w",))
    data = project_snapshots(basis, snaps, derivative_fields=("q", "p", "w"))
    for D in data.derivatives.values():
        assert not np.any(D)


def test_project_too_short(rng):
    snaps = snapshot_set(rng, K=8)
    basis = assemble_basis(Problem.EXP_WAVE_1D, np.eye(6), [np.eye(6)], ("w",))
    with pytest.raises(SeriesTooShort):
        project_snapshots(basis, snaps)


def test_build_basis_and_truncate(rng):
    snaps = snapshot_set(rng)
    basis = build_basis(snaps, ("w",), 4)
    small = basis.truncate(2)
    assert small.r == 2 and np.array_equal(small.block("q"), basis.block("q")[:, :2])
    with pytest.raises(ValueError):
        basis.truncate(5)


def test_snapshot_set_invariants(rng):
    with pytest.raises(ValueError):
        SnapshotSet({"q": np.zeros((3, 4))}, np.arange(5.0), Problem.EXP_WAVE_1D)
    with pytest.raises(ValueError):
        SnapshotSet({"q": np.zeros((3, 3))}, np.array([0.0, 0.1, 0.3]), Problem.EXP_WAVE_1D)
    with pytest.raises(ValueError):
        SnapshotSet({"q": np.zeros((3, 3))}, np.array([0.2, 0.1, 0.0]), Problem.EXP_WAVE_1D)


def test_projection_error_series(rng):
    V = orthonormal(rng, 10, 3)
    assert np.all(projection_error(V, V @ rng.standard_normal((3, 4))) <= 1e-14)
    e = projection_error(V, rng.standard_normal((10, 50)))
    assert np.all((e >= 0) & (e <= 1))
    W = rng.standard_normal((10, 4))
    W[:, 2] = 0
    assert np.isnan(projection_error(V, W)[2])
    full = orthonormal(rng, 10, 6)
    errs = [projection_error(full[:, :r], W[:, [0]])[0] for r in range(1, 7)]
    assert np.all(np.diff(errs) <= 1e-15)
