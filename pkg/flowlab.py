"""
### Training dynamics of a linear single-layer model.
Mean-squared-error losses and gradients, plain gradient descent, closed-form
gradient-flow solutions (clean and noisy, discrete and continuous time) and
the analytical predictions for noise-induced bias and decay rates.

Conventions: X, X# are n x m, the loss is ||X# - model(X)||_F^2 / (2mn), and
tau is the gradient-flow pseudo-time (tau = steps * learning_rate).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

import matcore
from matcore import (ConfigError, DimensionError, DivergenceError, Mat,
                     SingularityError)
from sysgen import BasisPair, SnapshotData

logger = logging.getLogger(__name__)

LOSS_KINDS = ("discrete", "continuous_euler")
DIVERGENCE_LOSS = 1e12
SINGULARITY_RATIO = 1e-12



@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    steps: int
    record_every: int = 1

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if self.record_every < 1:
            raise ConfigError(f"record_every must be >= 1, got {self.record_every}")

    @property
    def tau(self) -> float:
        return self.steps * self.learning_rate



@dataclass(frozen=True)
class Checkpoint:
    tau: float
    Ahat: Mat
    loss: float



@dataclass(frozen=True)
class FlowResult:
    checkpoints: list[Checkpoint]
    final: Mat

    @property
    def taus(self) -> np.ndarray:
        return np.array([c.tau for c in self.checkpoints])

    @property
    def losses(self) -> np.ndarray:
        return np.array([c.loss for c in self.checkpoints])



@dataclass(frozen=True)
class BiasPrediction:
    """
    Expected learned operator under measurement noise, in the SVD basis of X.

    predicted_Atilde = Atilde @ diag(multiplicative_factors) + diag(additive_diagonal)
    """
    multiplicative_factors: np.ndarray
    additive_diagonal: np.ndarray
    predicted_Atilde: Mat
    snr: np.ndarray = field(default=None)
    identity_factors: np.ndarray = field(default=None)



def _check_pair(Ahat, data: SnapshotData) -> Mat:
    Ahat = matcore._square(Ahat)
    if Ahat.shape[0] != data.n:
        raise DimensionError(f"operator is {Ahat.shape}, data have n={data.n}")
    return Ahat
# _check_pair



def _require_dt(data: SnapshotData) -> float:
    if data.dt is None:
        raise ConfigError("continuous-time loss needs data with dt")
    return data.dt
# _require_dt



def loss_discrete(Ahat, data: SnapshotData) -> float:
    """||X# - Ahat X||_F^2 / (2mn)"""
    Ahat = _check_pair(Ahat, data)
    R = data.Xsharp - Ahat @ data.X
    return float(np.sum(R * R) / (2 * data.m * data.n))
# loss_discrete



def grad_discrete(Ahat, data: SnapshotData) -> Mat:
    """-(1/mn)(X# - Ahat X) X^T"""
    Ahat = _check_pair(Ahat, data)
    R = data.Xsharp - Ahat @ data.X
    return -(R @ data.X.T) / (data.m * data.n)
# grad_discrete



def loss_continuous_euler(Ahat, data: SnapshotData) -> float:
    """||X# - (I + Ahat dt) X||_F^2 / (2mn)"""
    Ahat = _check_pair(Ahat, data)
    dt = _require_dt(data)
    R = data.Xsharp - data.X - dt * (Ahat @ data.X)
    return float(np.sum(R * R) / (2 * data.m * data.n))
# loss_continuous_euler



def grad_continuous_euler(Ahat, data: SnapshotData) -> Mat:
    """-(dt/mn)(X# - X - dt Ahat X) X^T"""
    Ahat = _check_pair(Ahat, data)
    dt = _require_dt(data)
    R = data.Xsharp - data.X - dt * (Ahat @ data.X)
    return -dt * (R @ data.X.T) / (data.m * data.n)
# grad_continuous_euler



def loss_continuous_exact(Ahat, data: SnapshotData) -> float:
    """||X# - e^(Ahat dt) X||_F^2 / (2mn)"""
    Ahat = _check_pair(Ahat, data)
    dt = _require_dt(data)
    R = data.Xsharp - matcore.matexp(Ahat * dt) @ data.X
    return float(np.sum(R * R) / (2 * data.m * data.n))
# loss_continuous_exact



def fd_grad_exact(Ahat, data: SnapshotData, h: float = 1e-6) -> Mat:
    """
    Central finite-difference gradient of loss_continuous_exact.

    There is no closed form for this gradient; it only serves as an oracle
    for the Euler approximation.
    """
    if not h > 0:
        raise ConfigError(f"finite-difference step must be positive, got {h}")
    Ahat = _check_pair(Ahat, data)
    _require_dt(data)
    n = Ahat.shape[0]
    G = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            E = np.zeros((n, n))
            E[i, j] = h
            G[i, j] = (loss_continuous_exact(Ahat + E, data)
                       - loss_continuous_exact(Ahat - E, data)) / (2 * h)
    return G
# fd_grad_exact



_LOSSES = {
    "discrete": (loss_discrete, grad_discrete),
    "continuous_euler": (loss_continuous_euler, grad_continuous_euler),
}



def decay_rates(X, dt: Optional[float] = None) -> np.ndarray:
    """
    Per-direction convergence rates of the clean flow, in descending order:
    eigenvalues of XX^T/(mn), times dt^2 in continuous time.
    """
    X = matcore.as_mat(X)
    n, m = X.shape
    s = np.linalg.svd(X, compute_uv=False)
    rates = np.zeros(n)
    rates[:len(s)] = s ** 2 / (m * n)
    if dt is not None:
        rates = rates * dt ** 2
    return rates
# decay_rates



def gd_train(Ahat0, data: SnapshotData, config: TrainConfig,
             loss_kind: str = "discrete") -> FlowResult:
    """
    Full-batch gradient descent A_{k+1} = A_k - lr * grad(A_k).

    Checkpoints are taken at step 0, every `record_every` steps and at the
    last step, with tau = k * lr.

    Raises:
        DivergenceError: at the first step whose loss exceeds 1e12
    """
    if loss_kind not in _LOSSES:
        raise ConfigError(f"unknown loss kind {loss_kind!r}; use one of {LOSS_KINDS}")
    loss_fn, grad_fn = _LOSSES[loss_kind]
    Ahat = _check_pair(Ahat0, data).copy()
    lr = config.learning_rate

    dt = data.dt if loss_kind == "continuous_euler" else None
    top_rate = float(decay_rates(data.X, dt)[0])
    if lr * top_rate >= 2.0:
        logger.warning("learning rate %g exceeds the stability bound 2/%g; "
                       "gradient descent will not track the flow", lr, top_rate)

    checkpoints = [Checkpoint(tau=0.0, Ahat=Ahat.copy(), loss=loss_fn(Ahat, data))]
    for k in range(1, config.steps + 1):
        Ahat = Ahat - lr * grad_fn(Ahat, data)
        loss = loss_fn(Ahat, data)
        if not loss <= DIVERGENCE_LOSS:
            raise DivergenceError(f"gradient descent diverged at step {k} (loss={loss:.3e})",
                                  step=k)
        if k % config.record_every == 0 or k == config.steps:
            checkpoints.append(Checkpoint(tau=k * lr, Ahat=Ahat.copy(), loss=loss))
    return FlowResult(checkpoints=checkpoints, final=Ahat)
# gd_train



def _null_projector(X) -> Mat:
    res = matcore.svd(X)
    U2 = res.U[:, res.rank:]
    return U2 @ U2.T
# _null_projector



def _clean_flow(Ahat0, A, X, tau: float, scale: float) -> Mat:
    Ahat0 = matcore._square(Ahat0)
    A = matcore._square(A)
    X = matcore.as_mat(X)
    if Ahat0.shape != A.shape or X.shape[0] != A.shape[0]:
        raise DimensionError(f"shapes disagree: Ahat0 {Ahat0.shape}, A {A.shape}, X {X.shape}")
    if tau < 0:
        raise ConfigError(f"tau must be non-negative, got {tau}")
    if math.isinf(tau):
        decay = _null_projector(X)
    else:
        n, m = X.shape
        decay = matcore.matexp(-(scale / (m * n)) * tau * (X @ X.T))
    return A + (Ahat0 - A) @ decay
# _clean_flow



def flow_closed_discrete(Ahat0, A, X, tau: float) -> Mat:
    """
    Gradient flow of the clean discrete loss:
    Ahat(tau) = A + [Ahat(0) - A] exp(-XX^T tau / (mn)).

    tau = math.inf replaces the exponential with the projector onto the null
    space of XX^T, so unlearnable directions keep their initial values.
    """
    return _clean_flow(Ahat0, A, X, tau, 1.0)
# flow_closed_discrete



def flow_closed_continuous(Ahat0, A, X, dt: float, tau: float) -> Mat:
    """Clean Euler-loss flow: A + [Ahat(0) - A] exp(-dt^2 XX^T tau / (mn))"""
    if dt <= 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    return _clean_flow(Ahat0, A, X, tau, dt * dt)
# flow_closed_continuous



def _noisy_flow(Ahat0, A, X, N, Nsharp, tau: float, dt: Optional[float]) -> Mat:
    Ahat0 = matcore._square(Ahat0)
    A = matcore._square(A)
    X = matcore.as_mat(X)
    N = matcore.as_mat(N)
    Nsharp = matcore.as_mat(Nsharp)
    n, m = X.shape
    if Ahat0.shape != (n, n) or A.shape != (n, n) or N.shape != X.shape \
            or Nsharp.shape != X.shape:
        raise DimensionError(f"shapes disagree: Ahat0 {Ahat0.shape}, A {A.shape}, "
                             f"X {X.shape}, N {N.shape}, Nsharp {Nsharp.shape}")
    if tau < 0:
        raise ConfigError(f"tau must be non-negative, got {tau}")

    Y = X + N
    YYt = Y @ Y.T
    ev = np.linalg.eigvalsh(YYt)
    if not ev[0] > SINGULARITY_RATIO * ev[-1]:
        raise SingularityError(
            f"(X+N)(X+N)^T is singular: smallest eigenvalue {ev[0]:.3e}, "
            f"largest {ev[-1]:.3e}")

    # Fixed point of the flow: A + residual (X+N)^T [(X+N)(X+N)^T]^-1
    if dt is None:
        residual = Nsharp - A @ N
        scale = 1.0
    else:
        residual = (Nsharp - (np.eye(n) + A * dt) @ N) / dt
        scale = dt * dt
    limit = A + matcore.solve_spd(YYt, residual @ Y.T)
    if math.isinf(tau):
        return limit
    decay = matcore.matexp(-(scale / (m * n)) * tau * YYt)
    return limit + (Ahat0 - limit) @ decay
# _noisy_flow



def flow_closed_discrete_noisy(Ahat0, A, X, N, Nsharp, tau: float) -> Mat:
    """
    Gradient flow on noisy discrete data (X+N, AX+N#).

    Ahat(tau) = L + [Ahat(0) - L] exp(-(X+N)(X+N)^T tau / (mn)) with the limit
    L = A + (N# - AN)(X+N)^T [(X+N)(X+N)^T]^-1. tau = math.inf returns L.

    Raises:
        SingularityError: when (X+N)(X+N)^T has smallest eigenvalue below
            1e-12 times its largest
    """
    return _noisy_flow(Ahat0, A, X, N, Nsharp, tau, None)
# flow_closed_discrete_noisy



def flow_closed_continuous_noisy(Ahat0, A, X, N, Nsharp, dt: float, tau: float) -> Mat:
    """
    Gradient flow of the Euler loss on noisy continuous data
    (X+N, (I + A dt)X + N#).

    The decay is exp(-dt^2 (X+N)(X+N)^T tau / (mn)) and the limit is
    A + (1/dt)[N# - (I + A dt)N](X+N)^T [(X+N)(X+N)^T]^-1.
    """
    if dt <= 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    return _noisy_flow(Ahat0, A, X, N, Nsharp, tau, dt)
# flow_closed_continuous_noisy



def _bias(Atilde, singular_values, m: int, sigma2: float, dt: Optional[float],
          tol: float) -> BiasPrediction:
    Atilde = matcore._square(Atilde)
    n = Atilde.shape[0]
    if sigma2 < 0:
        raise ConfigError(f"sigma2 must be non-negative, got {sigma2}")
    s = np.zeros(n)
    sv = np.asarray(singular_values, dtype=np.float64)[:n]
    s[:len(sv)] = sv
    if tol == 0:
        tol = matcore.default_tolerance((n, max(m, n)), float(s.max(initial=0.0)))
    nonzero = s > tol

    s2 = s ** 2
    noise = m * sigma2
    factors = np.zeros(n)
    factors[nonzero] = s2[nonzero] / (s2[nonzero] + noise)

    with np.errstate(divide="ignore"):
        snr = np.where(nonzero, s2 / noise if noise > 0 else np.inf, 0.0)
    identity = np.where(np.isinf(snr), 1.0, snr / (1.0 + snr))

    additive = np.zeros(n)
    if dt is not None:
        additive[nonzero] = -(noise / (s2[nonzero] + noise)) / dt
        additive[~nonzero] = -1.0 / dt

    predicted = Atilde * factors + np.diag(additive)
    return BiasPrediction(multiplicative_factors=factors, additive_diagonal=additive,
                          predicted_Atilde=predicted, snr=snr, identity_factors=identity)
# _bias



def predict_bias_discrete(Atilde, singular_values: Sequence[float], m: int,
                          sigma2: float, tol: float = 0.0) -> BiasPrediction:
    """
    Expected tau -> infinity operator in the SVD basis under iid noise of variance sigma2.

    Column i is scaled by sigma_i^2 / (sigma_i^2 + m sigma2) = SNR_i / (1 + SNR_i)
    with SNR_i = sigma_i^2 / (m sigma2); zero-energy columns go to 0.
    """
    return _bias(Atilde, singular_values, m, sigma2, None, tol)
# predict_bias_discrete



def predict_bias_continuous(Atilde, singular_values: Sequence[float], m: int,
                            sigma2: float, dt: float, tol: float = 0.0) -> BiasPrediction:
    """
    As predict_bias_discrete, plus the additive diagonal
    -(1/dt) m sigma2 / (sigma_i^2 + m sigma2), which is -1/dt on zero-energy directions.
    """
    if dt <= 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    return _bias(Atilde, singular_values, m, sigma2, dt, tol)
# predict_bias_continuous



def unlearnable_decay_rate(sigma2: float, n: int) -> float:
    """Expected gradient-flow rate sigma^2/n at which noise erases the initialization"""
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    if sigma2 < 0:
        raise ConfigError(f"sigma2 must be non-negative, got {sigma2}")
    return sigma2 / n
# unlearnable_decay_rate



def bias_from_mean(Ahat_tilde, Atilde) -> tuple[np.ndarray, np.ndarray]:
    """
    Estimate per-direction (factor, additive) from a learned operator in the SVD basis.

    Column j is fitted as factor_j * Atilde[:, j] + additive_j * e_j by least squares.
    """
    Ahat_tilde = matcore._square(Ahat_tilde)
    Atilde = matcore._square(Atilde)
    n = Atilde.shape[0]
    factors = np.empty(n)
    additive = np.empty(n)
    for j in range(n):
        design = np.column_stack([Atilde[:, j], np.eye(n)[:, j]])
        coef, *_ = np.linalg.lstsq(design, Ahat_tilde[:, j], rcond=None)
        factors[j], additive[j] = coef
    return factors, additive
# bias_from_mean



def column_distance_curve(trajectory: Sequence[Mat], limit, columns: Sequence[int],
                          basis: Optional[BasisPair] = None) -> np.ndarray:
    """
    ||column_j(Ahat(tau)) - column_j(limit)|| over a trajectory, per requested column.

    With `basis` the columns are taken in the SVD basis (U^T . U).

    Returns:
        array of shape (len(trajectory), len(columns))
    """
    limit = matcore._square(limit)
    U = None if basis is None else basis.U
    cols = list(columns)
    out = np.empty((len(trajectory), len(cols)))
    for k, Ahat in enumerate(trajectory):
        D = matcore._square(Ahat) - limit
        if U is not None:
            D = U.T @ D @ U
        out[k] = np.linalg.norm(D[:, cols], axis=0)
    return out
# column_distance_curve



def fit_decay_rate(taus, values) -> float:
    """Rate k of the least-squares fit log(values) ~ c - k tau"""
    taus = np.asarray(taus, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    keep = values > 0
    if np.count_nonzero(keep) < 2:
        raise ConfigError("need at least two positive values to fit a decay rate")
    slope, _ = np.polyfit(taus[keep], np.log(values[keep]), 1)
    return float(-slope)
# fit_decay_rate
