import numpy as np
import pytest

import matcore
import sysgen
from matcore import ConfigError, DegenerateDataError, DimensionError, InputDomainError, SpecError
from sysgen import BasisPair, BlockSpec, SnapshotData





def _sorted(vals):
    return np.sort_complex(np.asarray(vals, dtype=np.complex128))


def test_block_system_full_rank_spectrum():
    A, basis = sysgen.build_block_system(BlockSpec(n=2, r=2, learnable_eigenvalues=[0.5, 0.9]), 0)
    np.testing.assert_allclose(_sorted(matcore.eig(A)), [0.5, 0.9], atol=1e-12)
    assert basis.r == 2


def test_block_system_spectrum_is_union():
    spec = BlockSpec(n=3, r=2, learnable_eigenvalues=[0.9, 0.5], complement_eigenvalues=[1.2])
    A, _ = sysgen.build_block_system(spec, 1)
    np.testing.assert_allclose(_sorted(matcore.eig(A)), [0.5, 0.9, 1.2], atol=1e-10)


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_block_system_subspace_is_invariant(seed):
    spec = BlockSpec(n=5, r=3, learnable_eigenvalues=[0.5 + 0.3j, 0.5 - 0.3j, 0.8])
    A, basis = sysgen.build_block_system(spec, seed)
    U1 = basis.U1
    leak = (np.eye(5) - U1 @ U1.T) @ A @ U1
    assert np.linalg.norm(leak) <= 1e-10
    np.testing.assert_allclose(_sorted(np.linalg.eigvals(U1.T @ A @ U1)),
                               _sorted([0.5 + 0.3j, 0.5 - 0.3j, 0.8]), atol=1e-10)


def test_block_system_in_own_basis_is_block_triangular():
    spec = BlockSpec(n=6, r=2, learnable_eigenvalues=[0.3, 0.7])
    A, basis = sysgen.build_block_system(spec, 9)
    At = sysgen.to_svd_basis(A, basis)
    assert np.linalg.norm(At[2:, :2]) <= 1e-10


def test_block_spec_validation():
    with pytest.raises(SpecError):
        BlockSpec(n=3, r=2, learnable_eigenvalues=[0.5 + 0.3j, 0.2])
    with pytest.raises(SpecError):
        BlockSpec(n=3, r=4, learnable_eigenvalues=[0.1] * 4)
    with pytest.raises(SpecError):
        BlockSpec(n=3, r=1, learnable_eigenvalues=[0.1], complement_eigenvalues=[0.2])
    # SpecError is a ConfigError
    with pytest.raises(ConfigError):
        BlockSpec(n=2, r=1, learnable_eigenvalues=[0.1, 0.2])


def test_block_system_is_deterministic():
    spec = BlockSpec(n=4, r=2, learnable_eigenvalues=[0.2, 0.4])
    A1, b1 = sysgen.build_block_system(spec, 42)
    A2, b2 = sysgen.build_block_system(spec, 42)
    assert np.array_equal(A1, A2)
    assert np.array_equal(b1.U, b2.U)


def test_discrete_pairs_identity():
    x0 = np.random.default_rng(0).standard_normal((3, 2))
    data = sysgen.discrete_pairs(np.eye(3), x0, 3)
    assert np.array_equal(data.X, data.Xsharp)
    assert data.m == 6


def test_discrete_pairs_geometric_decay():
    data = sysgen.discrete_pairs(0.5 * np.eye(2), [[1.0], [0.0]], 2)
    np.testing.assert_allclose(data.X, [[1.0, 0.5], [0.0, 0.0]])
    np.testing.assert_allclose(data.Xsharp, [[0.5, 0.25], [0.0, 0.0]])


def test_discrete_pairs_residual_and_chaining():
    rng = np.random.default_rng(2)
    A = rng.standard_normal((4, 4)) / 2
    data = sysgen.discrete_pairs(A, rng.standard_normal((4, 3)), 5)
    assert np.max(np.abs(data.Xsharp - A @ data.X)) <= 1e-14
    # within a trajectory x_{i+1} = x#_i
    np.testing.assert_array_equal(data.X[:, 1:5], data.Xsharp[:, 0:4])


def test_discrete_pairs_dimension_mismatch():
    with pytest.raises(DimensionError):
        sysgen.discrete_pairs(np.eye(3), np.ones((2, 1)), 2)


def test_continuous_pairs_zero_dynamics():
    x0 = np.ones((2, 1))
    for method in ("exact", "euler"):
        data = sysgen.continuous_pairs(np.zeros((2, 2)), 0.3, x0, 4, method=method)
        np.testing.assert_allclose(data.X, data.Xsharp)
        assert data.dt == 0.3


def test_continuous_pairs_scalar_exponential():
    data = sysgen.continuous_pairs([[-1.0]], 0.1, [[2.0]], 1, method="exact")
    assert data.Xsharp[0, 0] == pytest.approx(2.0 * np.exp(-0.1), rel=1e-14)


def test_continuous_pairs_euler_error_is_second_order():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((3, 3))
    x0 = rng.standard_normal((3, 1))

    def gap(dt):
        exact = sysgen.continuous_pairs(A, dt, x0, 1, "exact").Xsharp
        euler = sysgen.continuous_pairs(A, dt, x0, 1, "euler").Xsharp
        return np.linalg.norm(exact - euler)

    ratio = gap(2e-3) / gap(1e-3)
    assert 3.6 < ratio < 4.4


def test_continuous_pairs_rejects_bad_dt():
    with pytest.raises(ConfigError):
        sysgen.continuous_pairs(np.eye(2), 0.0, np.ones((2, 1)), 2)
    with pytest.raises(ConfigError):
        sysgen.continuous_pairs(np.eye(2), 0.1, np.ones((2, 1)), 2, method="rk4")


def test_energy_shaped_pairs_singular_values():
    spec = BlockSpec(n=4, r=2, learnable_eigenvalues=[0.5, 0.8])
    A, basis = sysgen.build_block_system(spec, 0)
    data = sysgen.energy_shaped_pairs(A, basis, [5.0, 0.5], 30, seed=1)
    res = matcore.svd(data.X)
    np.testing.assert_allclose(res.singular_values[:2], [5.0, 0.5], rtol=1e-12)
    assert res.rank == 2
    np.testing.assert_allclose(data.Xsharp, A @ data.X)


def _clean(n=4, m=10_000, seed=0):
    X = np.random.default_rng(seed).standard_normal((n, m))
    return SnapshotData(X=X, Xsharp=X.copy())


def test_inject_noise_zero_sigma_is_identity():
    data = _clean(m=20)
    assert sysgen.inject_noise(data, 0.0, seed=1) is data


def test_inject_noise_variance():
    noisy = sysgen.inject_noise(_clean(), 0.1, seed=7)
    assert noisy.is_noisy
    assert np.var(noisy.N) == pytest.approx(0.01, rel=0.05)
    assert np.var(noisy.Nsharp) == pytest.approx(0.01, rel=0.05)
    np.testing.assert_allclose(noisy.X - noisy.N, _clean().X)


def test_inject_noise_negative_sigma():
    with pytest.raises(ConfigError):
        sysgen.inject_noise(_clean(m=5), -0.1, seed=0)


def test_inject_noise_trajectory_shifted():
    x0 = np.random.default_rng(0).standard_normal((3, 4))
    data = sysgen.discrete_pairs(0.9 * np.eye(3), x0, 5)
    noisy = sysgen.inject_noise(data, 0.2, seed=3, structure="trajectory_shifted")
    for start in range(0, 20, 5):
        np.testing.assert_array_equal(noisy.N[:, start + 1:start + 5],
                                      noisy.Nsharp[:, start:start + 4])


def test_masked_noise_stays_outside_data_subspace():
    spec = BlockSpec(n=5, r=2, learnable_eigenvalues=[0.3, 0.6])
    A, basis = sysgen.build_block_system(spec, 4)
    data = sysgen.energy_shaped_pairs(A, basis, [3.0, 1.0], 40, seed=5)
    mask = sysgen.data_basis(data)
    noisy = sysgen.inject_noise(data, 0.5, seed=6, subspace_mask=mask)
    assert np.linalg.norm(mask.U1.T @ noisy.N) <= 1e-12
    assert np.linalg.norm(mask.U1.T @ noisy.Nsharp) <= 1e-12

    full = BasisPair(U=np.eye(5), r=5)
    assert sysgen.inject_noise(data, 0.5, seed=6, subspace_mask=full) is data


def test_whiten_equal_singular_values():
    rng = np.random.default_rng(0)
    Q, _ = np.linalg.qr(rng.standard_normal((6, 3)))
    X = 2.5 * Q.T
    data = SnapshotData(X=X, Xsharp=X)
    wdata, W = sysgen.whiten(data)
    np.testing.assert_allclose(np.linalg.svd(wdata.X, compute_uv=False), [1.0, 1.0, 1.0])
    np.testing.assert_allclose(W, np.eye(3) / 2.5, atol=1e-12)
    assert wdata.whitening_source == "clean"


def test_whiten_rotated_diagonal():
    rng = np.random.default_rng(1)
    R = sysgen.random_orthogonal(2, rng)
    X = np.diag([10.0, 1.0]) @ R
    wdata, _ = sysgen.whiten(SnapshotData(X=X, Xsharp=X))
    np.testing.assert_allclose(np.linalg.svd(wdata.X, compute_uv=False), [1.0, 1.0])


def test_whiten_rank_one_keeps_zero_direction():
    X = np.array([[3.0, 4.0, 0.0], [0.0, 0.0, 0.0]])
    wdata, W = sysgen.whiten(SnapshotData(X=X, Xsharp=X))
    s = np.linalg.svd(wdata.X, compute_uv=False)
    np.testing.assert_allclose(s, [1.0, 0.0], atol=1e-12)
    assert W[1, 1] == pytest.approx(1.0)


def test_whiten_degenerate_and_noisy(caplog):
    with pytest.raises(DegenerateDataError):
        sysgen.whiten(SnapshotData(X=np.zeros((2, 3)), Xsharp=np.zeros((2, 3))))
    noisy = sysgen.inject_noise(_clean(m=50), 0.1, seed=2)
    with caplog.at_level("WARNING", logger="sysgen"):
        wdata, _ = sysgen.whiten(noisy)
    assert wdata.whitening_source == "noisy"
    assert "noisy" in caplog.text


def test_unwhiten_inverts_similarity():
    rng = np.random.default_rng(8)
    X = rng.standard_normal((3, 12))
    _, W = sysgen.whiten(SnapshotData(X=X, Xsharp=X))
    A = rng.standard_normal((3, 3))
    np.testing.assert_allclose(sysgen.unwhiten(W @ A @ np.linalg.inv(W), W), A, atol=1e-12)


def test_project_full_rank_keeps_dimension():
    data = _clean(n=3, m=8)
    reduced, basis = sysgen.project_to_data_subspace(data)
    assert basis.r == 3
    assert reduced.X.shape == (3, 8)
    np.testing.assert_allclose(np.linalg.norm(reduced.X), np.linalg.norm(data.X))


def test_project_single_direction():
    X = np.zeros((3, 7))
    X[0] = np.arange(1, 8)
    reduced, basis = sysgen.project_to_data_subspace(SnapshotData(X=X, Xsharp=2 * X))
    assert reduced.X.shape == (1, 7)
    assert basis.r == 1


def test_projected_learning_recovers_learnable_spectrum():
    spec = BlockSpec(n=6, r=3, learnable_eigenvalues=[0.4, 0.6 + 0.2j, 0.6 - 0.2j])
    A, basis = sysgen.build_block_system(spec, 11)
    x0 = basis.U1 @ np.random.default_rng(12).standard_normal((3, 4))
    data = sysgen.discrete_pairs(A, x0, 6)
    reduced, pbasis = sysgen.project_to_data_subspace(data)
    Ahat_r = sysgen.least_squares_solution(reduced)
    np.testing.assert_allclose(_sorted(np.linalg.eigvals(Ahat_r)),
                               _sorted(spec.learnable_eigenvalues), atol=1e-8)
    lifted = sysgen.lift_from_subspace(Ahat_r, pbasis)
    np.testing.assert_allclose(lifted @ data.X, data.Xsharp, atol=1e-10)


def test_svd_basis_round_trip():
    rng = np.random.default_rng(13)
    basis = BasisPair(U=sysgen.random_orthogonal(4, rng), r=2)
    M = rng.standard_normal((4, 4))
    np.testing.assert_allclose(sysgen.from_svd_basis(sysgen.to_svd_basis(M, basis), basis), M,
                               atol=1e-12)
    identity = BasisPair(U=np.eye(4), r=4)
    np.testing.assert_array_equal(sysgen.to_svd_basis(M, identity), M)


def test_snapshot_validation_and_summary():
    with pytest.raises(DimensionError):
        SnapshotData(X=np.ones((2, 3)), Xsharp=np.ones((2, 4)))
    with pytest.raises(ConfigError):
        SnapshotData(X=np.ones((2, 3)), Xsharp=np.ones((2, 3)), dt=-1.0)
    data = SnapshotData(X=np.ones((2, 3)), Xsharp=np.ones((2, 3)), dt=0.1)
    assert "continuous" in data.get_summary()


def test_snapshot_rejects_non_finite_entries():
    X = np.ones((2, 3))
    X[1, 2] = np.nan
    with pytest.raises(InputDomainError):
        SnapshotData(X=X, Xsharp=np.ones((2, 3)))
    with pytest.raises(InputDomainError):
        SnapshotData(X=np.ones((2, 3)), Xsharp=np.full((2, 3), np.inf))
