"""
### Linear systems and snapshot datasets.
Builds dynamics matrices with a known invariant subspace, generates snapshot
pairs (discrete, continuous exact, continuous Euler), injects measurement
noise, and implements the data-side remedies: whitening and projection onto
the data subspace.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

import matcore
from matcore import ConfigError, DegenerateDataError, DimensionError, Mat, SpecError

logger = logging.getLogger(__name__)

NOISE_STRUCTURES = ("none", "iid", "trajectory_shifted")
CONTINUOUS_METHODS = ("exact", "euler")



@dataclass(frozen=True)
class SnapshotData:
    """
    Paired snapshot matrices X and X# (both n x m) plus how they were made.

    `dt` is None for discrete-time data. `N` and `Nsharp` hold the noise that
    has been added so far (None while the data are clean).
    """
    X: Mat
    Xsharp: Mat
    dt: Optional[float] = None
    noise_sigma: float = 0.0
    noise_structure: str = "none"
    trajectory_length: Optional[int] = None
    N: Optional[Mat] = field(default=None, repr=False)
    Nsharp: Optional[Mat] = field(default=None, repr=False)
    whitening_source: Optional[str] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "X", matcore.as_mat(self.X))
        object.__setattr__(self, "Xsharp", matcore.as_mat(self.Xsharp))
        if self.X.shape != self.Xsharp.shape:
            raise DimensionError(f"X {self.X.shape} and Xsharp {self.Xsharp.shape} differ")
        if self.X.shape[1] < 1:
            raise ConfigError("at least one snapshot pair is required")
        if self.dt is not None and self.dt <= 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.noise_structure not in NOISE_STRUCTURES:
            raise ConfigError(f"unknown noise structure {self.noise_structure!r}")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.X.shape[1]

    @property
    def is_continuous(self) -> bool:
        return self.dt is not None

    @property
    def is_noisy(self) -> bool:
        return self.N is not None

    def get_summary(self) -> str:
        kind = f"continuous (dt={self.dt:g})" if self.is_continuous else "discrete"
        return (f"{kind} snapshots n={self.n} m={self.m} "
                f"noise={self.noise_structure} sigma={self.noise_sigma:g}")



@dataclass(frozen=True)
class BlockSpec:
    """
    Specification of a system with an r-dimensional invariant subspace.

    In the rotated basis the dynamics are [[A11, A12], [0, A22]], with
    eig(A11) = learnable_eigenvalues and A12 entries of size coupling_scale.
    """
    n: int
    r: int
    learnable_eigenvalues: Sequence[complex]
    coupling_scale: float = 0.1
    complement_eigenvalues: Union[Sequence[complex], str] = "random"

    def __post_init__(self) -> None:
        if not 1 <= self.r <= self.n:
            raise SpecError(f"need 1 <= r <= n, got r={self.r}, n={self.n}")
        if len(self.learnable_eigenvalues) != self.r:
            raise SpecError(
                f"{len(self.learnable_eigenvalues)} learnable eigenvalues given for r={self.r}")
        _check_conjugate_closed(self.learnable_eigenvalues, "learnable_eigenvalues")
        if isinstance(self.complement_eigenvalues, str):
            if self.complement_eigenvalues != "random":
                raise SpecError(
                    f"complement_eigenvalues must be a list or 'random', "
                    f"got {self.complement_eigenvalues!r}")
        else:
            if len(self.complement_eigenvalues) != self.n - self.r:
                raise SpecError(
                    f"{len(self.complement_eigenvalues)} complement eigenvalues given "
                    f"for n-r={self.n - self.r}")
            _check_conjugate_closed(self.complement_eigenvalues, "complement_eigenvalues")



@dataclass(frozen=True)
class BasisPair:
    """Orthogonal basis U whose first r columns span the data/invariant subspace"""
    U: Mat
    r: int

    @property
    def U1(self) -> Mat:
        return self.U[:, :self.r]

    @property
    def U2(self) -> Mat:
        return self.U[:, self.r:]



def _check_conjugate_closed(values: Sequence[complex], name: str) -> None:
    vals = np.asarray(values, dtype=np.complex128)
    key = np.lexsort((vals.imag, vals.real))
    conj = np.conj(vals)
    conj_key = np.lexsort((conj.imag, conj.real))
    if not np.allclose(vals[key], conj[conj_key], rtol=0.0, atol=1e-12):
        raise SpecError(f"{name} is not closed under complex conjugation: {list(values)}")
# _check_conjugate_closed



def _real_block(values: Sequence[complex], coupling: float,
                rng: np.random.Generator) -> Mat:
    """Real quasi-triangular matrix with the given (conjugate-closed) eigenvalues"""
    vals = np.asarray(values, dtype=np.complex128)
    k = len(vals)
    T = np.zeros((k, k))
    reals = sorted(v.real for v in vals if abs(v.imag) <= 1e-12)
    uppers = sorted((v for v in vals if v.imag > 1e-12), key=lambda v: (v.real, v.imag))
    i = 0
    for lam in reals:
        T[i, i] = lam
        i += 1
    for lam in uppers:
        a, b = lam.real, lam.imag
        T[i:i + 2, i:i + 2] = [[a, b], [-b, a]]
        i += 2

    # Strictly above the 1x1/2x2 diagonal blocks: free coupling.
    mask = np.triu(np.ones((k, k), dtype=bool), 1)
    j = len(reals)
    while j < k:
        mask[j, j + 1] = False
        j += 2
    T[mask] = coupling * rng.standard_normal(np.count_nonzero(mask))
    return T
# _real_block



def random_orthogonal(n: int, rng: np.random.Generator) -> Mat:
    """Haar-distributed orthogonal matrix: QR of a Gaussian with sign-fixed diagonal"""
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Q * signs
# random_orthogonal



def build_block_system(spec: BlockSpec, seed: int) -> tuple[Mat, BasisPair]:
    """
    Build A = U [[A11, A12], [0, A22]] U^T for a seeded random orthogonal U.

    Args:
        spec: block specification
        seed: RNG seed; identical (spec, seed) gives bitwise-identical output

    Returns:
        (A, basis) with basis.U the rotation and basis.r = spec.r
    """
    rng = np.random.default_rng(seed)
    n, r = spec.n, spec.r
    U = random_orthogonal(n, rng)

    At = np.zeros((n, n))
    At[:r, :r] = _real_block(spec.learnable_eigenvalues, spec.coupling_scale, rng)
    if r < n:
        At[:r, r:] = spec.coupling_scale * rng.standard_normal((r, n - r))
        if isinstance(spec.complement_eigenvalues, str):
            # Glorot-normal block, the view of an uninformed n x n initialization.
            At[r:, r:] = rng.normal(0.0, np.sqrt(1.0 / n), size=(n - r, n - r))
        else:
            At[r:, r:] = _real_block(spec.complement_eigenvalues, spec.coupling_scale, rng)

    A = U @ At @ U.T
    logger.debug("built block system n=%d r=%d seed=%d", n, r, seed)
    return A, BasisPair(U=U, r=r)
# build_block_system



def _propagate(P: Mat, initial_states, steps: int) -> tuple[Mat, Mat]:
    x0 = matcore.as_mat(initial_states)
    if P.shape[0] != x0.shape[0]:
        raise DimensionError(f"operator is {P.shape}, initial states are {x0.shape}")
    if steps < 1:
        raise ConfigError(f"steps must be >= 1, got {steps}")
    n, k = x0.shape
    X = np.empty((n, k * steps))
    Xs = np.empty((n, k * steps))
    for j in range(k):
        x = x0[:, j]
        for i in range(steps):
            nxt = P @ x
            X[:, j * steps + i] = x
            Xs[:, j * steps + i] = nxt
            x = nxt
    return X, Xs
# _propagate



def discrete_pairs(A, initial_states, steps_per_trajectory: int) -> SnapshotData:
    """
    Snapshot pairs x# = A x along k trajectories.

    Columns are grouped by trajectory, so within a trajectory column i+1 of X
    equals column i of Xsharp.
    """
    A = matcore._square(A)
    X, Xs = _propagate(A, initial_states, steps_per_trajectory)
    return SnapshotData(X=X, Xsharp=Xs, trajectory_length=steps_per_trajectory)
# discrete_pairs



def propagator(A, dt: float, method: str) -> Mat:
    """One-step map of the continuous system: e^(A dt) or the Euler map I + A dt"""
    if dt <= 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    A = matcore._square(A)
    if method == "exact":
        return matcore.matexp(A * dt)
    if method == "euler":
        return np.eye(A.shape[0]) + A * dt
    raise ConfigError(f"unknown integration method {method!r}; use one of {CONTINUOUS_METHODS}")
# propagator



def continuous_pairs(A, dt: float, initial_states, steps: int,
                     method: str = "exact") -> SnapshotData:
    """
    Snapshot pairs separated by dt for dx/dt = A x.

    `exact` uses the matrix exponential; `euler` uses I + A dt, which makes the
    Euler-gradient identities in flowlab hold exactly.
    """
    P = propagator(A, dt, method)
    X, Xs = _propagate(P, initial_states, steps)
    return SnapshotData(X=X, Xsharp=Xs, dt=float(dt), trajectory_length=steps)
# continuous_pairs



def energy_shaped_pairs(A, basis: BasisPair, energies: Sequence[float], m: int, seed: int,
                        dt: Optional[float] = None, method: str = "euler") -> SnapshotData:
    """
    Snapshot pairs with prescribed singular values.

    X = U1 diag(energies) V^T for a seeded m x r matrix V with orthonormal
    columns, and X# is X pushed through A (or its propagator when dt is given).
    The left singular vectors of X are therefore the first r columns of
    basis.U, up to sign.

    Args:
        A: dynamics matrix; span(U1) should be invariant under it
        basis: rotation from build_block_system
        energies: r singular values, any order
        m: number of snapshot pairs (m >= r)
        seed: RNG seed for V
        dt: time step for continuous data, None for discrete
        method: "exact" or "euler" when dt is given
    """
    s = np.asarray(energies, dtype=np.float64)
    r = basis.r
    if s.shape != (r,):
        raise DimensionError(f"need {r} energies, got {s.shape}")
    if m < r:
        raise ConfigError(f"m={m} is smaller than r={r}")
    rng = np.random.default_rng(seed)
    V, _ = np.linalg.qr(rng.standard_normal((m, r)))
    X = (basis.U1 * s) @ V.T
    P = matcore._square(A) if dt is None else propagator(A, dt, method)
    return SnapshotData(X=X, Xsharp=P @ X, dt=None if dt is None else float(dt))
# energy_shaped_pairs



def _shifted_noise(rows: int, m: int, trajectory_length: Optional[int],
                   sigma: float, rng: np.random.Generator) -> tuple[Mat, Mat]:
    L = trajectory_length or m
    if m % L:
        raise ConfigError(f"m={m} is not a whole number of trajectories of length {L}")
    N = np.empty((rows, m))
    Ns = np.empty((rows, m))
    for start in range(0, m, L):
        g = rng.normal(0.0, sigma, size=(rows, L + 1))
        N[:, start:start + L] = g[:, :L]
        Ns[:, start:start + L] = g[:, 1:]
    return N, Ns
# _shifted_noise



def inject_noise(data: SnapshotData, sigma: float, seed: int, structure: str = "iid",
                 subspace_mask: Optional[BasisPair] = None) -> SnapshotData:
    """
    Add zero-mean Gaussian noise of variance sigma^2 to X and X#.

    Args:
        data: snapshots to perturb
        sigma: noise standard deviation
        seed: RNG seed
        structure: "iid" (all entries independent) or "trajectory_shifted"
            (within a trajectory, the noise on X# at step i is the noise on X
            at step i+1)
        subspace_mask: when given, the noise is U2 G for an (n-r) x m Gaussian G,
            i.e. it only touches the directions outside span(U1)

    Returns:
        New SnapshotData; the accumulated noise is kept in N and Nsharp
    """
    if sigma < 0:
        raise ConfigError(f"sigma must be non-negative, got {sigma}")
    if structure not in ("iid", "trajectory_shifted"):
        raise ConfigError(f"unknown noise structure {structure!r}")
    n, m = data.X.shape
    rows = n
    if subspace_mask is not None:
        if subspace_mask.U.shape != (n, n):
            raise DimensionError(f"mask basis is {subspace_mask.U.shape}, data have n={n}")
        rows = n - subspace_mask.r
    if sigma == 0 or rows == 0:
        return data

    rng = np.random.default_rng(seed)
    if structure == "iid":
        G = rng.normal(0.0, sigma, size=(rows, m))
        Gs = rng.normal(0.0, sigma, size=(rows, m))
    else:
        G, Gs = _shifted_noise(rows, m, data.trajectory_length, sigma, rng)

    if subspace_mask is not None:
        G = subspace_mask.U2 @ G
        Gs = subspace_mask.U2 @ Gs

    N = G if data.N is None else data.N + G
    Ns = Gs if data.Nsharp is None else data.Nsharp + Gs
    logger.debug("injected %s noise sigma=%g seed=%d masked=%s",
                 structure, sigma, seed, subspace_mask is not None)
    return replace(data, X=data.X + G, Xsharp=data.Xsharp + Gs, noise_sigma=float(sigma),
                   noise_structure=structure, N=N, Nsharp=Ns)
# inject_noise



def data_basis(data: SnapshotData, tol: float = 0.0) -> BasisPair:
    """Left singular vectors of X with the numerical rank as r"""
    res = matcore.svd(data.X, tol)
    return BasisPair(U=res.U, r=res.rank)
# data_basis



def whiten(data: SnapshotData, tol: float = 0.0) -> tuple[SnapshotData, Mat]:
    """
    Rescale the data so that every nonzero singular value of X becomes 1.

    W = U diag(w) U^T with w_i = 1/sigma_i on retained directions and 1 on
    zero-energy directions. W is computed from whatever X is passed in; the
    returned data record whether that X was clean or noisy.

    Returns:
        (whitened data, W)
    """
    res = matcore.svd(data.X, tol)
    if res.rank == 0:
        raise DegenerateDataError("cannot whiten: X carries no energy")
    n = data.n
    w = np.ones(n)
    w[:res.rank] = 1.0 / res.singular_values[:res.rank]
    W = (res.U * w) @ res.U.T
    source = "noisy" if data.is_noisy else "clean"
    if data.is_noisy:
        logger.warning("whitening computed from noisy data")
    whitened = replace(
        data,
        X=W @ data.X,
        Xsharp=W @ data.Xsharp,
        N=None if data.N is None else W @ data.N,
        Nsharp=None if data.Nsharp is None else W @ data.Nsharp,
        whitening_source=source,
    )
    return whitened, W
# whiten



def unwhiten(Ahat_w, W) -> Mat:
    """Map an operator learned on whitened data back: W^-1 Ahat_w W"""
    W = matcore._square(W)
    return np.linalg.solve(W, matcore.as_mat(Ahat_w) @ W)
# unwhiten



def project_to_data_subspace(data: SnapshotData,
                             tol: float = 0.0) -> tuple[SnapshotData, BasisPair]:
    """
    Reduce the data to the r directions where X has energy.

    Returns:
        (r x m data (U1^T X, U1^T X#), basis recording U and r)
    """
    basis = data_basis(data, tol)
    U1 = basis.U1
    reduced = replace(
        data,
        X=U1.T @ data.X,
        Xsharp=U1.T @ data.Xsharp,
        N=None if data.N is None else U1.T @ data.N,
        Nsharp=None if data.Nsharp is None else U1.T @ data.Nsharp,
    )
    return reduced, basis
# project_to_data_subspace



def lift_from_subspace(Ahat_r, basis: BasisPair) -> Mat:
    """Embed an r x r operator as U1 Ahat_r U1^T (zero off the data subspace)"""
    Ahat_r = matcore._square(Ahat_r)
    if Ahat_r.shape[0] != basis.r:
        raise DimensionError(f"operator is {Ahat_r.shape}, basis has r={basis.r}")
    return basis.U1 @ Ahat_r @ basis.U1.T
# lift_from_subspace



def to_svd_basis(Ahat, basis: BasisPair) -> Mat:
    """U^T Ahat U"""
    Ahat = matcore._square(Ahat)
    if Ahat.shape != basis.U.shape:
        raise DimensionError(f"operator is {Ahat.shape}, basis is {basis.U.shape}")
    return basis.U.T @ Ahat @ basis.U
# to_svd_basis



def from_svd_basis(Atilde, basis: BasisPair) -> Mat:
    """U Atilde U^T"""
    Atilde = matcore._square(Atilde)
    if Atilde.shape != basis.U.shape:
        raise DimensionError(f"operator is {Atilde.shape}, basis is {basis.U.shape}")
    return basis.U @ Atilde @ basis.U.T
# from_svd_basis



def least_squares_solution(data: SnapshotData, tol: float = 0.0) -> Mat:
    """Minimum-norm least-squares operator X# X^+"""
    return data.Xsharp @ matcore.pinv(data.X, tol)
# least_squares_solution
