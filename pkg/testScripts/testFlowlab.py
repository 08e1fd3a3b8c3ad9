import math

import numpy as np
import pytest

import flowlab
import initgen
import matcore
import sysgen
from flowlab import TrainConfig
from matcore import ConfigError, DimensionError, DivergenceError, SingularityError
from sysgen import BasisPair, BlockSpec, SnapshotData





def _random_pair(seed, n=4, m=9, dt=None):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, m))
    Xs = rng.standard_normal((n, m))
    return SnapshotData(X=X, Xsharp=Xs, dt=dt), rng.standard_normal((n, n))


def _fd(loss, Ahat, data, h=1e-5):
    n = Ahat.shape[0]
    G = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            E = np.zeros((n, n))
            E[i, j] = h
            G[i, j] = (loss(Ahat + E, data) - loss(Ahat - E, data)) / (2 * h)
    return G


# --- losses and gradients ---------------------------------------------------

def test_loss_discrete_hand_values():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((3, 3))
    X = rng.standard_normal((3, 5))
    assert flowlab.loss_discrete(A, SnapshotData(X=X, Xsharp=A @ X)) == pytest.approx(0.0, abs=1e-28)

    e1 = np.array([[1.0], [0.0]])
    assert flowlab.loss_discrete(np.zeros((2, 2)), SnapshotData(X=e1, Xsharp=e1)) == 0.25


def test_loss_discrete_matches_double_loop():
    data, Ahat = _random_pair(1)
    n, m = data.X.shape
    total = 0.0
    for i in range(n):
        for k in range(m):
            pred = sum(Ahat[i, j] * data.X[j, k] for j in range(n))
            total += (data.Xsharp[i, k] - pred) ** 2
    assert flowlab.loss_discrete(Ahat, data) == pytest.approx(total / (2 * m * n), abs=1e-12)


def test_grad_discrete_stationary_and_scalar():
    rng = np.random.default_rng(2)
    A = rng.standard_normal((3, 3))
    X = rng.standard_normal((3, 6))
    np.testing.assert_allclose(flowlab.grad_discrete(A, SnapshotData(X=X, Xsharp=A @ X)),
                               np.zeros((3, 3)), atol=1e-14)
    scalar = SnapshotData(X=np.array([[2.0]]), Xsharp=np.array([[1.0]]))
    assert flowlab.grad_discrete(np.zeros((1, 1)), scalar)[0, 0] == pytest.approx(-2.0)


@pytest.mark.parametrize("seed", range(50))
def test_analytic_gradients_match_finite_differences(seed):
    data, Ahat = _random_pair(seed, dt=0.1)
    G = flowlab.grad_discrete(Ahat, data)
    Gfd = _fd(flowlab.loss_discrete, Ahat, data)
    assert np.linalg.norm(G - Gfd) <= 1e-6 * np.linalg.norm(G)

    Ge = flowlab.grad_continuous_euler(Ahat, data)
    Gfd_e = _fd(flowlab.loss_continuous_euler, Ahat, data)
    assert np.linalg.norm(Ge - Gfd_e) <= 1e-6 * np.linalg.norm(Ge)


def test_euler_loss_fixed_points():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((3, 3))
    data = sysgen.continuous_pairs(A, 0.05, rng.standard_normal((3, 2)), 4, method="euler")
    assert flowlab.loss_continuous_euler(A, data) == pytest.approx(0.0, abs=1e-26)
    np.testing.assert_allclose(flowlab.grad_continuous_euler(A, data), 0.0, atol=1e-14)

    scalar = SnapshotData(X=np.array([[1.0]]), Xsharp=np.array([[1.0]]), dt=0.1)
    assert flowlab.loss_continuous_euler(np.zeros((1, 1)), scalar) == 0.0
    assert flowlab.grad_continuous_euler(np.zeros((1, 1)), scalar)[0, 0] == 0.0


def test_continuous_losses_need_dt():
    data, Ahat = _random_pair(4)
    with pytest.raises(ConfigError):
        flowlab.loss_continuous_euler(Ahat, data)
    with pytest.raises(ConfigError):
        flowlab.grad_continuous_euler(Ahat, data)
    with pytest.raises(DimensionError):
        flowlab.loss_discrete(np.eye(3), data)


def test_exact_loss_zero_on_exact_data():
    rng = np.random.default_rng(5)
    A = rng.standard_normal((3, 3))
    data = sysgen.continuous_pairs(A, 0.1, rng.standard_normal((3, 2)), 3, method="exact")
    assert flowlab.loss_continuous_exact(A, data) == pytest.approx(0.0, abs=1e-24)


def test_fd_grad_exact_scalar():
    a, dt, x, xs = 0.7, 0.2, 1.5, 0.4
    data = SnapshotData(X=np.array([[x]]), Xsharp=np.array([[xs]]), dt=dt)
    e = math.exp(a * dt)
    expected = -(xs - e * x) * dt * e * x
    assert flowlab.fd_grad_exact(np.array([[a]]), data)[0, 0] == pytest.approx(expected, abs=1e-5)


def test_euler_gradient_approaches_exact_gradient_quadratically():
    rng = np.random.default_rng(6)
    X = rng.standard_normal((3, 5))
    Xs = rng.standard_normal((3, 5))
    Ahat = rng.standard_normal((3, 3))

    def gap(dt):
        data = SnapshotData(X=X, Xsharp=Xs, dt=dt)
        return np.linalg.norm(flowlab.fd_grad_exact(Ahat, data)
                              - flowlab.grad_continuous_euler(Ahat, data))

    ratio = gap(0.02) / gap(0.01)
    assert 3.0 <= ratio <= 5.0


# --- gradient descent and closed forms ----------------------------------------

def test_gd_at_true_operator_stays_put():
    rng = np.random.default_rng(7)
    A = rng.standard_normal((4, 4))
    X = rng.standard_normal((4, 10))
    result = flowlab.gd_train(A, SnapshotData(X=X, Xsharp=A @ X), TrainConfig(0.1, 20, 5))
    assert [c.tau for c in result.checkpoints] == pytest.approx([0.0, 0.5, 1.0, 1.5, 2.0])
    for c in result.checkpoints:
        np.testing.assert_allclose(c.Ahat, A, atol=1e-12)


def test_gd_divergence_reports_step(caplog):
    data, Ahat = _random_pair(8, m=20)
    with caplog.at_level("WARNING", logger="flowlab"):
        with pytest.raises(DivergenceError) as info:
            flowlab.gd_train(Ahat, data, TrainConfig(learning_rate=1e3, steps=100))
    assert info.value.step >= 1
    assert "stability bound" in caplog.text


def test_gd_divergence_caught_between_checkpoints():
    # residual e = I - Ahat is multiplied by -11.5 per step, loss = 132.25^k / 4
    eye = np.eye(2)
    data = SnapshotData(X=eye, Xsharp=eye)
    with pytest.raises(DivergenceError) as info:
        flowlab.gd_train(np.zeros((2, 2)), data,
                         TrainConfig(learning_rate=50.0, steps=400, record_every=100))
    assert info.value.step == 6


def test_gd_checkpoints_ordered_and_loss_decreasing():
    rng = np.random.default_rng(12)
    A = rng.standard_normal((4, 4))
    X = rng.standard_normal((4, 10))
    data = SnapshotData(X=X, Xsharp=A @ X)
    lr = 1.0 / flowlab.decay_rates(X)[0]
    result = flowlab.gd_train(np.zeros((4, 4)), data, TrainConfig(lr, 50, record_every=5))
    assert len(result.checkpoints) == 11
    assert np.all(np.diff(result.taus) > 0)
    assert np.all(np.diff(result.losses) <= 0)
    assert result.losses[-1] < result.losses[0]


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0.0, steps=5)
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0.1, steps=0)
    assert TrainConfig(0.25, 8).tau == 2.0


def test_gd_converges_to_closed_form_at_first_order():
    tau = 10.0
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        A = rng.normal(0.0, 1.0 / math.sqrt(8), size=(8, 8))
        X = rng.standard_normal((8, 32))
        data = SnapshotData(X=X, Xsharp=A @ X)
        Ahat0 = rng.normal(0.0, 1.0 / math.sqrt(8), size=(8, 8))

        errors = []
        for lr in (1e-3, 5e-4):
            steps = int(round(tau / lr))
            cfg = TrainConfig(learning_rate=lr, steps=steps, record_every=steps)
            gd = flowlab.gd_train(Ahat0, data, cfg).final
            errors.append(np.linalg.norm(gd - flowlab.flow_closed_discrete(Ahat0, A, X, cfg.tau)))

        assert 1.6 <= errors[0] / errors[1] <= 2.4
        assert errors[0] < 1e-3 * np.linalg.norm(A)


def test_closed_form_limits():
    rng = np.random.default_rng(9)
    A = rng.standard_normal((4, 4))
    X = rng.standard_normal((4, 12))
    Ahat0 = rng.standard_normal((4, 4))
    np.testing.assert_allclose(flowlab.flow_closed_discrete(Ahat0, A, X, 0.0), Ahat0, atol=1e-14)

    slowest = np.linalg.eigvalsh(X @ X.T / (12 * 4))[0]
    far = flowlab.flow_closed_discrete(Ahat0, A, X, 1e4 / slowest)
    np.testing.assert_allclose(far, A, atol=1e-8)
    np.testing.assert_allclose(flowlab.flow_closed_discrete(Ahat0, A, X, math.inf), A, atol=1e-10)

    with pytest.raises(ConfigError):
        flowlab.flow_closed_discrete(Ahat0, A, X, -1.0)


def _rank_deficient_problem(seed, n=8, r=4, m=32, dt=None):
    spec = BlockSpec(n=n, r=r, learnable_eigenvalues=list(np.linspace(0.9, 0.3, r)))
    A, basis = sysgen.build_block_system(spec, seed)
    energies = np.linspace(4.0, 1.0, r) * math.sqrt(m)
    data = sysgen.energy_shaped_pairs(A, basis, energies, m, seed + 1, dt=dt, method="euler")
    return A, data


def test_unlearnable_columns_stay_frozen():
    A, data = _rank_deficient_problem(10)
    U = sysgen.data_basis(data).U
    Ahat0 = initgen.sample_init(initgen.InitScheme("glorot_normal", 8), 11)
    frozen0 = (U.T @ Ahat0 @ U)[:, 4:]

    result = flowlab.gd_train(Ahat0, data, TrainConfig(learning_rate=0.4, steps=200,
                                                      record_every=10))
    for c in result.checkpoints:
        assert np.max(np.abs((U.T @ c.Ahat @ U)[:, 4:] - frozen0)) < 1e-10

    for tau in (0.0, 1.0, 50.0, 1e3, math.inf):
        Ahat = flowlab.flow_closed_discrete(Ahat0, A, data.X, tau)
        assert np.max(np.abs((U.T @ Ahat @ U)[:, 4:] - frozen0)) < 1e-10


def test_continuous_closed_form_matches_gd():
    rng = np.random.default_rng(12)
    A = rng.normal(0.0, 0.5, size=(4, 4))
    dt = 0.5
    X = rng.standard_normal((4, 12))
    data = SnapshotData(X=X, Xsharp=(np.eye(4) + A * dt) @ X, dt=dt)
    Ahat0 = np.zeros((4, 4))
    errors = []
    for lr in (0.2, 0.1):
        steps = int(round(40.0 / lr))
        cfg = TrainConfig(learning_rate=lr, steps=steps, record_every=steps)
        gd = flowlab.gd_train(Ahat0, data, cfg, loss_kind="continuous_euler").final
        errors.append(np.linalg.norm(gd - flowlab.flow_closed_continuous(Ahat0, A, data.X, dt,
                                                                         cfg.tau)))
    assert errors[0] < 1e-2 * np.linalg.norm(A)
    assert 1.6 <= errors[0] / errors[1] <= 2.4


def test_noisy_flow_without_noise_is_clean_flow():
    rng = np.random.default_rng(13)
    A = rng.standard_normal((3, 3))
    X = rng.standard_normal((3, 10))
    Ahat0 = rng.standard_normal((3, 3))
    Z = np.zeros_like(X)
    np.testing.assert_allclose(flowlab.flow_closed_discrete_noisy(Ahat0, A, X, Z, Z, 2.5),
                               flowlab.flow_closed_discrete(Ahat0, A, X, 2.5), atol=1e-12)
    np.testing.assert_allclose(flowlab.flow_closed_discrete_noisy(Ahat0, A, X, Z, Z, math.inf),
                               A, atol=1e-12)

    data = sysgen.continuous_pairs(A, 0.1, rng.standard_normal((3, 2)), 6, method="euler")
    Zc = np.zeros_like(data.X)
    np.testing.assert_allclose(
        flowlab.flow_closed_continuous_noisy(Ahat0, A, data.X, Zc, Zc, 0.1, math.inf),
        A, atol=1e-8)


def test_noisy_limit_is_least_squares_solution():
    rng = np.random.default_rng(14)
    A = rng.standard_normal((4, 4))
    X = rng.standard_normal((4, 15))
    N = 0.3 * rng.standard_normal((4, 15))
    Ns = 0.3 * rng.standard_normal((4, 15))
    limit = flowlab.flow_closed_discrete_noisy(np.zeros((4, 4)), A, X, N, Ns, math.inf)
    np.testing.assert_allclose(limit, (A @ X + Ns) @ matcore.pinv(X + N), atol=1e-8)


def test_noisy_flow_singular_data():
    X = np.zeros((3, 5))
    X[0] = 1.0
    Z = np.zeros_like(X)
    with pytest.raises(SingularityError, match="smallest eigenvalue"):
        flowlab.flow_closed_discrete_noisy(np.zeros((3, 3)), np.eye(3), X, Z, Z, 1.0)


# --- bias predictions ----------------------------------------------------------

def test_bias_prediction_simple_cases():
    At = np.diag([0.5, 0.7, 0.9])
    clean = flowlab.predict_bias_discrete(At, [3.0, 2.0, 1.0], m=10, sigma2=0.0)
    np.testing.assert_allclose(clean.multiplicative_factors, 1.0)
    np.testing.assert_allclose(clean.predicted_Atilde, At)

    half = flowlab.predict_bias_discrete(At, [2.0, 1.0, 0.5], m=4, sigma2=1.0)
    assert half.multiplicative_factors[0] == pytest.approx(0.5)
    assert half.snr[0] == pytest.approx(1.0)
    assert half.identity_factors[0] == pytest.approx(0.5)
    assert clean.identity_factors[0] == 1.0

    cont = flowlab.predict_bias_continuous(At, [3.0, 2.0, 0.0], m=10, sigma2=0.0, dt=0.1)
    np.testing.assert_allclose(cont.multiplicative_factors, [1.0, 1.0, 0.0])
    np.testing.assert_allclose(cont.additive_diagonal, [0.0, 0.0, -10.0])

    noisy = flowlab.predict_bias_continuous(At, [3.0, 2.0, 0.0], m=10, sigma2=0.04, dt=0.1)
    assert noisy.additive_diagonal[2] == -10.0
    assert noisy.additive_diagonal[0] == pytest.approx(-10.0 * 0.4 / (9.0 + 0.4))


def test_unlearnable_decay_rate():
    assert flowlab.unlearnable_decay_rate(0.0, 4) == 0.0
    assert flowlab.unlearnable_decay_rate(0.04, 4) == pytest.approx(0.01)
    with pytest.raises(ConfigError):
        flowlab.unlearnable_decay_rate(-1.0, 4)


def test_bias_from_mean_recovers_construction():
    rng = np.random.default_rng(15)
    At = rng.standard_normal((4, 4))
    f = np.array([0.9, 0.5, 0.2, 0.0])
    d = np.array([-0.1, -0.5, -0.8, -1.0])
    factors, additive = flowlab.bias_from_mean(At * f + np.diag(d), At)
    np.testing.assert_allclose(factors, f, atol=1e-12)
    np.testing.assert_allclose(additive, d, atol=1e-12)


# Dense, so that no column is parallel to a coordinate axis.
BIAS_ATILDE = np.array([
    [0.8, -0.6, 0.7, 2.0],
    [0.4, 0.9, -0.5, -1.8],
    [-0.5, 0.6, 0.8, 1.6],
    [0.6, -0.4, 0.5, 2.2],
])


def _bias_problem(r, m, sigma, snr, dt=None):
    U = sysgen.random_orthogonal(4, np.random.default_rng(20))
    A = U @ BIAS_ATILDE @ U.T
    energies = np.sqrt(np.asarray(snr) * m * sigma ** 2)
    data = sysgen.energy_shaped_pairs(A, BasisPair(U=U, r=r), energies, m, 21, dt=dt,
                                      method="euler")
    dbasis = sysgen.data_basis(data)
    return A, data, dbasis, sysgen.to_svd_basis(A, dbasis)


def _mean_noisy_limit(A, data, sigma, draws, dt=None):
    total = np.zeros_like(A)
    zero = np.zeros_like(A)
    for k in range(draws):
        noisy = sysgen.inject_noise(data, sigma, seed=1000 + k)
        if dt is None:
            total += flowlab.flow_closed_discrete_noisy(zero, A, data.X, noisy.N, noisy.Nsharp,
                                                        math.inf)
        else:
            total += flowlab.flow_closed_continuous_noisy(zero, A, data.X, noisy.N, noisy.Nsharp,
                                                          dt, math.inf)
    return total / draws


def test_discrete_bias_matches_monte_carlo():
    m, sigma = 200, 0.05
    A, data, dbasis, At = _bias_problem(4, m, sigma, [10.0, 3.0, 1.0, 0.1])
    pred = flowlab.predict_bias_discrete(At, matcore.svd(data.X).singular_values, m, sigma ** 2)
    np.testing.assert_allclose(pred.multiplicative_factors,
                               [10 / 11, 3 / 4, 1 / 2, 0.1 / 1.1], rtol=1e-10)

    mean = sysgen.to_svd_basis(_mean_noisy_limit(A, data, sigma, 8000), dbasis)
    expected = pred.predicted_Atilde
    mask = np.abs(expected) > 0.05
    assert mask.sum() >= 12
    rel = np.abs(mean[mask] - expected[mask]) / np.abs(expected[mask])
    assert np.max(rel) < 0.05


@pytest.mark.parametrize("dt", [0.1, 0.01])
def test_continuous_additive_bias_matches_monte_carlo(dt):
    m, sigma = 200, 0.05
    A, data, dbasis, At = _bias_problem(3, m, sigma, [10.0, 1.0, 0.1], dt=dt)
    assert dbasis.r == 3
    pred = flowlab.predict_bias_continuous(At, matcore.svd(data.X).singular_values, m,
                                           sigma ** 2, dt)
    assert pred.additive_diagonal[3] == -1.0 / dt

    mean = sysgen.to_svd_basis(_mean_noisy_limit(A, data, sigma, 8000, dt=dt), dbasis)
    assert mean[3, 3] == pytest.approx(-1.0 / dt, rel=0.05)
    _, additive = flowlab.bias_from_mean(mean, At)
    for j in range(3):
        assert additive[j] == pytest.approx(pred.additive_diagonal[j], rel=0.05)


# --- convergence rates -----------------------------------------------------------

def _mean_unlearnable_rate(sigma2, draws=200):
    m, n = 200, 4
    spec = BlockSpec(n=n, r=3, learnable_eigenvalues=[0.8, 0.6, 0.4])
    A, basis = sysgen.build_block_system(spec, 30)
    data = sysgen.energy_shaped_pairs(A, basis, [40.0, 32.0, 28.3], m, 31)
    dbasis = sysgen.data_basis(data)
    Ahat0 = initgen.sample_init(initgen.InitScheme("glorot_normal", n), 32)
    taus = np.linspace(50.0, 300.0, 11)
    rates = []
    for k in range(draws):
        noisy = sysgen.inject_noise(data, math.sqrt(sigma2), seed=2000 + k)
        limit = flowlab.flow_closed_discrete_noisy(Ahat0, A, data.X, noisy.N, noisy.Nsharp,
                                                   math.inf)
        traj = [flowlab.flow_closed_discrete_noisy(Ahat0, A, data.X, noisy.N, noisy.Nsharp, t)
                for t in taus]
        curve = flowlab.column_distance_curve(traj, limit, [3], basis=dbasis)[:, 0]
        rates.append(flowlab.fit_decay_rate(taus, curve))
    return float(np.mean(rates))


def test_unlearnable_decay_rate_law():
    base = _mean_unlearnable_rate(0.04)
    assert base == pytest.approx(flowlab.unlearnable_decay_rate(0.04, 4), rel=0.2)
    doubled = _mean_unlearnable_rate(0.08)
    assert doubled / base == pytest.approx(2.0, rel=0.2)


def test_continuous_rate_scales_with_dt_squared():
    rng = np.random.default_rng(40)
    A = rng.normal(0.0, 0.3, size=(3, 3))
    X = rng.standard_normal((3, 20))
    Ahat0 = rng.standard_normal((3, 3))
    U = sysgen.BasisPair(U=matcore.svd(X).U, r=3)
    taus = np.linspace(0.0, 400.0, 21)

    def rate(dt):
        traj = [flowlab.flow_closed_continuous(Ahat0, A, X, dt, t) for t in taus]
        curve = flowlab.column_distance_curve(traj, A, [2], basis=U)[:, 0]
        return flowlab.fit_decay_rate(taus, curve)

    ratio = rate(0.2) / rate(0.1)
    assert 3.6 <= ratio <= 4.4
    np.testing.assert_allclose(flowlab.decay_rates(X, 0.2), 4 * flowlab.decay_rates(X, 0.1))


@pytest.mark.parametrize("seed", range(10))
def test_high_energy_direction_converges_first(seed):
    n, r, m = 3, 2, 30
    spec = BlockSpec(n=n, r=r, learnable_eigenvalues=[0.7, 0.4])
    A, basis = sysgen.build_block_system(spec, 50 + seed)
    s1 = math.sqrt(m * n)
    data = sysgen.energy_shaped_pairs(A, basis, [s1, s1 / 10], m, 60 + seed)
    dbasis = sysgen.data_basis(data)
    assert dbasis.r == r

    rng = np.random.default_rng(70 + seed)
    E = rng.standard_normal((n, n))
    E[:, :r] /= np.linalg.norm(E[:, :r], axis=0)
    Ahat0 = sysgen.from_svd_basis(sysgen.to_svd_basis(A, dbasis) + E, dbasis)

    taus = np.linspace(0.2, 10.0, 50)
    limit = flowlab.flow_closed_discrete(Ahat0, A, data.X, math.inf)
    traj = [flowlab.flow_closed_discrete(Ahat0, A, data.X, t) for t in taus]
    curves = flowlab.column_distance_curve(traj, limit, [0, 1], basis=dbasis)
    assert np.all(curves[:, 0] < curves[:, 1])

    wdata, _ = sysgen.whiten(data)
    rates = flowlab.decay_rates(wdata.X)
    assert rates[0] == pytest.approx(rates[1], abs=1e-8)
    assert rates[2] == pytest.approx(0.0, abs=1e-12)
