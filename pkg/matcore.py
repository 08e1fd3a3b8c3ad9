"""
### Dense real-matrix numerics for trainflow.
SVD with numerical rank, pseudoinverse, matrix exponential, eigenvalues and
spectral radius. Every other module goes through these helpers so that input
checking and tolerances are applied the same way everywhere.

A `Mat` is a 2-D float64 numpy array. Functions never modify their inputs.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

logger = logging.getLogger(__name__)

Mat = np.ndarray
ComplexList = np.ndarray

EPS = np.finfo(np.float64).eps



class TrainflowError(Exception):
    """Base class for every error raised by trainflow"""


class InputDomainError(TrainflowError, ValueError):
    """Input contains NaN or Inf"""


class DimensionError(TrainflowError, ValueError):
    """Shapes do not agree"""


class ConfigError(TrainflowError, ValueError):
    """Invalid configuration or parameter"""


class SpecError(ConfigError):
    """Invalid block-system specification"""


class DegenerateDataError(TrainflowError, ValueError):
    """Data carry no energy at all"""


class NumericalError(TrainflowError, ArithmeticError):
    """A numerical routine failed"""


class SingularityError(NumericalError):
    """A matrix that has to be inverted is numerically singular"""


class DivergenceError(NumericalError):
    """Gradient descent blew up"""

    def __init__(self, message: str, step: int) -> None:
        super().__init__(message)
        self.step = step



@dataclass(frozen=True)
class SvdResult:
    """Full SVD factors plus the numerical rank under `tolerance`"""
    U: Mat
    singular_values: np.ndarray
    V: Mat
    rank: int
    tolerance: float

    @property
    def Sigma(self) -> Mat:
        """Rectangular diagonal matrix of singular values, shaped like the input"""
        rows, cols = self.U.shape[0], self.V.shape[0]
        S = np.zeros((rows, cols))
        k = len(self.singular_values)
        S[:k, :k] = np.diag(self.singular_values)
        return S

    def reconstruct(self) -> Mat:
        return self.U @ self.Sigma @ self.V.T



def as_mat(M) -> Mat:
    """
    Coerce to a 2-D float64 array and reject non-finite entries.

    Args:
        M: array-like with two dimensions

    Returns:
        A float64 array (a copy when the input was not already float64)
    """
    arr = np.asarray(M, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputDomainError("matrix contains NaN or Inf entries")
    return arr
# as_mat



def _square(M) -> Mat:
    arr = as_mat(M)
    if arr.shape[0] != arr.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {arr.shape}")
    return arr
# _square



def default_tolerance(shape: tuple, sigma_max: float) -> float:
    """Conventional numerical-rank rule: max(rows, cols) * eps * sigma_max"""
    return max(shape) * EPS * sigma_max
# default_tolerance



def svd(M, tol: float = 0.0) -> SvdResult:
    """
    Full singular value decomposition with numerical rank.

    Args:
        M: rows x cols matrix
        tol: singular values above `tol` count towards the rank; 0 selects
            the default rule max(rows, cols) * eps * sigma_max

    Returns:
        SvdResult with orthogonal U (rows x rows) and V (cols x cols)
    """
    arr = as_mat(M)
    if tol < 0:
        raise ConfigError(f"tolerance must be non-negative, got {tol}")
    U, s, Vt = np.linalg.svd(arr, full_matrices=True)
    sigma_max = float(s[0]) if s.size else 0.0
    if tol == 0:
        tol = default_tolerance(arr.shape, sigma_max)
    rank = int(np.count_nonzero(s > tol))
    logger.debug("svd of %s matrix: rank %d at tolerance %.3e", arr.shape, rank, tol)
    return SvdResult(U=U, singular_values=s, V=Vt.T, rank=rank, tolerance=float(tol))
# svd



def pinv(M, tol: float = 0.0) -> Mat:
    """Moore-Penrose pseudoinverse, truncating singular values at or below `tol`"""
    res = svd(M, tol)
    r = res.rank
    inv_s = 1.0 / res.singular_values[:r]
    return (res.V[:, :r] * inv_s) @ res.U[:, :r].T
# pinv



def matexp(M) -> Mat:
    """
    Matrix exponential e^M.

    Scaling and squaring with a degree-13 Pade approximant (scipy's
    Al-Mohy/Higham implementation).
    """
    return scipy.linalg.expm(_square(M))
# matexp



def eig(M) -> ComplexList:
    """
    Eigenvalues of a real square matrix.

    LAPACK reduces to Hessenberg form and runs shifted QR. The result is
    sorted by real part, then imaginary part.

    Returns:
        complex128 array of length n
    """
    arr = _square(M)
    n = arr.shape[0]
    try:
        vals = np.linalg.eigvals(arr)
    except np.linalg.LinAlgError as e:
        raise NumericalError(
            f"eigenvalue iteration did not converge (n={n}, "
            f"frobenius norm={np.linalg.norm(arr):.6e}): {e}"
        ) from e
    vals = np.asarray(vals, dtype=np.complex128)

    # dgeev returns exact conjugate pairs for real input; only the order is fixed here.
    order = np.lexsort((vals.imag, vals.real))
    return vals[order]
# eig



def spectral_radius(M) -> float:
    """Largest eigenvalue modulus"""
    vals = eig(M)
    return float(np.max(np.abs(vals))) if vals.size else 0.0
# spectral_radius



def solve_spd(M, B) -> Mat:
    """
    Solve X @ M = B for X, with M symmetric positive definite.

    Used for the right-multiplication by [(X+N)(X+N)^T]^-1 in the closed-form
    flows. Cholesky first, plain LU as a fallback.
    """
    M = _square(M)
    B = as_mat(B)
    try:
        c = scipy.linalg.cho_factor(M)
        return scipy.linalg.cho_solve(c, B.T).T
    except np.linalg.LinAlgError:
        return np.linalg.solve(M.T, B.T).T
# solve_spd
