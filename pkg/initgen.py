"""
### Weight initializers and their eigenvalue spectra.
Glorot normal/uniform and the Gershgorin family (discrete, row-normalized,
continuous, forward-Euler), plus Monte Carlo spectrum statistics.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

import matcore
from matcore import ComplexList, ConfigError, Mat

logger = logging.getLogger(__name__)

KINDS = (
    "glorot_normal",
    "glorot_uniform",
    "gershgorin_discrete",
    "gershgorin_discrete_rownorm",
    "gershgorin_continuous",
    "gershgorin_euler",
)

DEFAULT_BINS = 151
DEFAULT_WINDOW = 1.5



@dataclass(frozen=True)
class InitScheme:
    """An initializer kind for n x n matrices (`dt` only for gershgorin_euler)"""
    kind: str
    n: int
    dt: Optional[float] = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown init scheme {self.kind!r}; use one of {KINDS}")
        if self.n < 1:
            raise ConfigError(f"n must be positive, got {self.n}")
        if self.is_gershgorin and self.n < 2:
            raise ConfigError(f"{self.kind} needs n >= 2, got n={self.n}")
        if self.kind == "gershgorin_euler" and (self.dt is None or self.dt <= 0):
            raise ConfigError(f"gershgorin_euler needs a positive dt, got {self.dt}")

    @property
    def is_gershgorin(self) -> bool:
        return self.kind.startswith("gershgorin")

    def label(self) -> str:
        return self.kind if self.dt is None else f"{self.kind}(dt={self.dt:g})"



@dataclass(frozen=True)
class SpectrumStats:
    """
    Eigenvalue cloud of many seeded samples.

    `counts` has shape (len(re_edges)-1, len(im_edges)-1) and always sums to
    n * trials: values outside the window are clipped into the edge bins.
    """
    eigenvalues: ComplexList
    phi: float
    frac_positive_real: float
    counts: np.ndarray
    re_edges: np.ndarray
    im_edges: np.ndarray
    trials: int
    n: int
    base_seed: int
    clipped: int = 0



def _offdiag_uniform(n: int, half_width: float, rng: np.random.Generator) -> Mat:
    M = rng.uniform(-half_width, half_width, size=(n, n))
    np.fill_diagonal(M, 0.0)
    return M
# _offdiag_uniform



def sample_init(scheme: InitScheme, seed: int) -> Mat:
    """
    Draw one n x n initialization.

    glorot_normal: N(0, 1/n) entries (fan_in = fan_out = n).
    glorot_uniform: U(-sqrt(3/n), sqrt(3/n)), same variance.
    gershgorin_discrete: zero diagonal, off-diagonal U(-1/(n-1), 1/(n-1)); every
        row and column absolute sum is below 1, so |lambda| < 1.
    gershgorin_discrete_rownorm: as above, then each row rescaled to absolute sum 1.
    gershgorin_continuous: off-diagonal as gershgorin_discrete, diagonal entry i
        equal to minus the off-diagonal absolute sum of row i, so every disk sits
        in the closed left half plane.
    gershgorin_euler: diagonal -1/dt, off-diagonal U(-1/((n-1)dt), 1/((n-1)dt)),
        so every disk sits inside the forward-Euler stability disk |1 + lambda dt| < 1.
    """
    n = scheme.n
    rng = np.random.default_rng(seed)
    kind = scheme.kind

    if kind == "glorot_normal":
        return rng.normal(0.0, math.sqrt(1.0 / n), size=(n, n))
    if kind == "glorot_uniform":
        limit = math.sqrt(3.0 / n)
        return rng.uniform(-limit, limit, size=(n, n))

    M = _offdiag_uniform(n, 1.0 / (n - 1), rng)
    if kind == "gershgorin_discrete":
        return M
    if kind == "gershgorin_discrete_rownorm":
        sums = np.abs(M).sum(axis=1, keepdims=True)
        return M / sums
    if kind == "gershgorin_continuous":
        np.fill_diagonal(M, -np.abs(M).sum(axis=1))
        return M
    # gershgorin_euler
    dt = scheme.dt
    M = M / dt
    np.fill_diagonal(M, -1.0 / dt)
    return M
# sample_init



def circular_law_radius(n: int, r: int = 0) -> float:
    """Limiting spectral radius sqrt((n-r)/n) of a Glorot block on the unlearnable directions"""
    if not 0 <= r <= n or n < 1:
        raise ConfigError(f"need 0 <= r <= n and n >= 1, got n={n}, r={r}")
    return math.sqrt((n - r) / n)
# circular_law_radius



def gershgorin_disks(M) -> tuple[np.ndarray, np.ndarray]:
    """Centres (diagonal entries) and radii (off-diagonal absolute row sums)"""
    M = matcore._square(M)
    centres = np.diag(M).copy()
    radii = np.abs(M).sum(axis=1) - np.abs(centres)
    return centres, radii
# gershgorin_disks



def stats_from_eigenvalues(eigenvalues, n: int, trials: int, base_seed: int,
                           bins: int = DEFAULT_BINS,
                           window: float = DEFAULT_WINDOW) -> SpectrumStats:
    """
    Summarise an eigenvalue cloud: phi, fraction with positive real part and a
    2-D histogram over [-window, window]^2.
    """
    vals = np.asarray(eigenvalues, dtype=np.complex128).ravel()
    if vals.size == 0:
        raise ConfigError("no eigenvalues to summarise")
    edges = np.linspace(-window, window, bins + 1)
    re = np.clip(vals.real, -window, window)
    im = np.clip(vals.imag, -window, window)
    clipped = int(np.count_nonzero((re != vals.real) | (im != vals.imag)))
    if clipped:
        logger.warning("%d of %d eigenvalues fall outside the [-%g, %g]^2 window "
                       "and were clipped into the edge bins", clipped, vals.size, window, window)
    counts, _, _ = np.histogram2d(re, im, bins=[edges, edges])
    return SpectrumStats(
        eigenvalues=vals,
        phi=float(np.mean(np.abs(vals) > 1.0)),
        frac_positive_real=float(np.mean(vals.real > 0.0)),
        counts=counts.astype(np.int64),
        re_edges=edges,
        im_edges=edges.copy(),
        trials=trials,
        n=n,
        base_seed=base_seed,
        clipped=clipped,
    )
# stats_from_eigenvalues



def spectrum_stats(scheme: InitScheme, trials: int, base_seed: int,
                   bins: int = DEFAULT_BINS, window: float = DEFAULT_WINDOW,
                   workers: int = 1) -> SpectrumStats:
    """
    Eigenvalue statistics over `trials` samples seeded base_seed .. base_seed+trials-1.

    Trials may run on a thread pool; results are merged in trial order, so the
    output does not depend on `workers`.
    """
    if trials < 1:
        raise ConfigError(f"trials must be >= 1, got {trials}")

    def one(i: int) -> np.ndarray:
        return matcore.eig(sample_init(scheme, base_seed + i))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(one, range(trials)))
    else:
        parts = [one(i) for i in range(trials)]
    logger.debug("spectrum of %s: %d trials from seed %d", scheme.label(), trials, base_seed)
    return stats_from_eigenvalues(np.concatenate(parts), scheme.n, trials, base_seed,
                                  bins=bins, window=window)
# spectrum_stats
