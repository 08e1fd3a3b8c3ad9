import numpy as np
import pytest

import initgen
import matcore
from matcore import (ConfigError, DimensionError, DivergenceError, InputDomainError,
                     NumericalError, SingularityError, TrainflowError)





def test_svd_identity():
    res = matcore.svd(np.eye(3))
    np.testing.assert_allclose(res.singular_values, [1.0, 1.0, 1.0])
    assert res.rank == 3


def test_svd_diagonal_rank_deficient():
    res = matcore.svd([[3.0, 0.0], [0.0, 0.0]])
    np.testing.assert_allclose(res.singular_values, [3.0, 0.0])
    assert res.rank == 1


def test_svd_reconstructs_rectangular_input():
    M = np.random.default_rng(0).standard_normal((4, 3))
    res = matcore.svd(M)
    assert res.U.shape == (4, 4) and res.V.shape == (3, 3)
    np.testing.assert_allclose(res.reconstruct(), M, atol=1e-10)


def test_svd_explicit_tolerance_truncates():
    res = matcore.svd(np.diag([1.0, 1e-3, 1e-9]), tol=1e-6)
    assert res.rank == 2
    assert res.tolerance == 1e-6


def test_svd_rejects_bad_input():
    with pytest.raises(InputDomainError):
        matcore.svd([[1.0, np.nan], [0.0, 1.0]])
    with pytest.raises(DimensionError):
        matcore.svd(np.ones(3))
    with pytest.raises(ConfigError):
        matcore.svd(np.eye(2), tol=-1.0)


def test_pinv_identity_and_truncation():
    np.testing.assert_allclose(matcore.pinv(np.eye(4)), np.eye(4))
    np.testing.assert_allclose(matcore.pinv(np.diag([2.0, 0.0])), np.diag([0.5, 0.0]))


def test_pinv_full_rank_is_inverse():
    M = np.random.default_rng(1).standard_normal((3, 3)) + 3 * np.eye(3)
    np.testing.assert_allclose(matcore.pinv(M) @ M, np.eye(3), atol=1e-9)


def test_matexp_known_cases():
    np.testing.assert_allclose(matcore.matexp(np.zeros((3, 3))), np.eye(3))
    np.testing.assert_allclose(matcore.matexp(np.diag([1.0, -1.0])),
                               np.diag([np.e, 1.0 / np.e]), rtol=1e-13)
    np.testing.assert_allclose(matcore.matexp([[0.0, 1.0], [0.0, 0.0]]),
                               [[1.0, 1.0], [0.0, 1.0]], atol=1e-14)


def test_matexp_non_square():
    with pytest.raises(DimensionError):
        matcore.matexp(np.ones((2, 3)))


def test_eig_rotation_generator():
    vals = matcore.eig([[0.0, 1.0], [-1.0, 0.0]])
    np.testing.assert_allclose(vals, [-1j, 1j], atol=1e-14)


def test_eig_upper_triangular_and_sorted():
    T = np.array([[3.0, 1.0, 4.0], [0.0, -2.0, 5.0], [0.0, 0.0, 0.5]])
    np.testing.assert_allclose(matcore.eig(T), [-2.0, 0.5, 3.0], atol=1e-12)


def test_eig_companion_matrix_roots():
    # lambda^2 - lambda - 1
    vals = matcore.eig([[1.0, 1.0], [1.0, 0.0]])
    golden = (1 + np.sqrt(5)) / 2
    np.testing.assert_allclose(vals.real, [1 - golden, golden], atol=1e-10)
    np.testing.assert_allclose(vals.imag, [0.0, 0.0], atol=1e-12)


def test_eig_failure_reports_size_and_norm(monkeypatch):
    def boom(_):
        raise np.linalg.LinAlgError("no convergence")

    monkeypatch.setattr(np.linalg, "eigvals", boom)
    with pytest.raises(NumericalError, match="n=2"):
        matcore.eig(np.eye(2))


def test_spectral_radius():
    assert matcore.spectral_radius(0.5 * np.eye(3)) == pytest.approx(0.5)
    assert matcore.spectral_radius([[0.0, 2.0], [0.0, 0.0]]) == 0.0
    G = initgen.sample_init(initgen.InitScheme("gershgorin_discrete", 12), seed=3)
    assert matcore.spectral_radius(G) < 1.0


def test_solve_spd_right_division():
    rng = np.random.default_rng(5)
    R = rng.standard_normal((4, 4))
    M = R @ R.T + 4 * np.eye(4)
    B = rng.standard_normal((3, 4))
    X = matcore.solve_spd(M, B)
    np.testing.assert_allclose(X @ M, B, atol=1e-10)


def test_error_hierarchy():
    assert issubclass(SingularityError, NumericalError)
    assert issubclass(NumericalError, TrainflowError)
    assert issubclass(ConfigError, ValueError)
    err = DivergenceError("blew up", step=17)
    assert err.step == 17
    assert isinstance(err, ArithmeticError)


@pytest.mark.parametrize("seed", range(10))
def test_matexp_inverse_pair(seed):
    M = np.random.default_rng(seed).standard_normal((4, 4))
    M *= 5.0 / np.linalg.norm(M, 2) * np.random.default_rng(seed + 100).uniform(0.1, 1.0)
    np.testing.assert_allclose(matcore.matexp(M) @ matcore.matexp(-M), np.eye(4), atol=1e-9)


@pytest.mark.parametrize("seed", range(10))
def test_eig_similarity_invariant(seed):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((5, 5))
    P = rng.standard_normal((5, 5)) + 5 * np.eye(5)
    original = matcore.eig(M)
    moved = matcore.eig(np.linalg.solve(P, M @ P))
    # conjugate pairs may swap order, so match nearest neighbours
    gaps = np.abs(moved[:, None] - original[None, :])
    assert np.max(gaps.min(axis=1)) < 1e-8
    assert np.max(gaps.min(axis=0)) < 1e-8


@pytest.mark.parametrize("seed", range(10))
def test_singular_values_from_gram_matrix(seed):
    M = np.random.default_rng(seed).standard_normal((6, 4))
    gram = np.sort(np.linalg.eigvalsh(M.T @ M))[::-1]
    np.testing.assert_allclose(matcore.svd(M).singular_values, np.sqrt(gram), rtol=1e-10)


@pytest.mark.parametrize("seed", range(10))
def test_pinv_tall_matches_normal_equations(seed):
    M = np.random.default_rng(seed).standard_normal((7, 3))
    np.testing.assert_allclose(matcore.pinv(M), np.linalg.solve(M.T @ M, M.T), atol=1e-10)


@pytest.mark.parametrize("shape", [(5, 3), (3, 5), (4, 4)])
def test_pinv_moore_penrose_conditions(shape):
    rng = np.random.default_rng(sum(shape))
    # rank 2 in every shape
    M = rng.standard_normal((shape[0], 2)) @ rng.standard_normal((2, shape[1]))
    P = matcore.pinv(M)
    np.testing.assert_allclose(M @ P @ M, M, atol=1e-9)
    np.testing.assert_allclose(P @ M @ P, P, atol=1e-9)
    np.testing.assert_allclose((M @ P).T, M @ P, atol=1e-9)
    np.testing.assert_allclose((P @ M).T, P @ M, atol=1e-9)
