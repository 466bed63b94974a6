'''
Matrix storage and the spectral quantities every stochastic-acceleration bound
consumes: operator norms, top eigenvalues of AᵀA and row norms.

Matrices are either dense `numpy.ndarray` objects or `scipy.sparse` CSR
matrices with sorted column indices and no stored zeros. Nothing in this module
mutates its input.
'''

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .constants import (FULL_NORM_THRESHOLD, FULL_SPECTRUM_THRESHOLD, PSD_CLAMP_TOL,
                        POWER_ITERATION_TOL, POWER_ITERATION_MAX_ITER,
                        POWER_FALLBACK_SEED, LANCZOS_SEED, LANCZOS_EXTRA_STEPS,
                        LANCZOS_BREAKDOWN_TOL)
from .errors import ConvergenceError, SpectrumError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Spectrum():
    '''
    Leading eigenvalues of AᵀA.

    Attributes
    ----------
    values : numpy.ndarray
        nonincreasing, nonnegative eigenvalue estimates
    exact : bool
        True when computed by a full dense decomposition
    degraded : bool
        True when Lanczos broke down before producing the requested count
    trace_shortfall : float
        sum(values) minus ∥A∥_F²; zero (up to rounding) for a full spectrum
    '''
    values: np.ndarray
    exact: bool
    degraded: bool = False
    trace_shortfall: float = float('nan')

    def __len__(self):
        return len(self.values)

    def __getitem__(self, index):
        return self.values[index]


def as_matrix(A):
    '''
    Returns the canonical storage of `A`: a float64 CSR matrix with sorted
    indices and no explicit zeros, or a float64 2-D array. Objects with a
    `matrix` attribute (forward operators) are unwrapped.
    '''
    inner = getattr(A, 'matrix', None)
    if inner is not None:
        return inner
    if sp.issparse(A):
        M = sp.csr_matrix(A, dtype=float, copy=True)
        M.sum_duplicates()
        M.eliminate_zeros()
        M.sort_indices()
    else:
        M = np.array(A, dtype=float)
        if M.ndim != 2:
            raise ValueError(f'Expected a 2-D matrix, got shape {M.shape}')
    if M.shape[0] < 1 or M.shape[1] < 1:
        raise ValueError(f'Matrix must have at least one row and column, got {M.shape}')
    return M


def row_norms_sq(A):
    '''
    Squared ℓ2 norm of every row of A.
    '''
    M = as_matrix(A)
    if sp.issparse(M):
        return np.asarray(M.multiply(M).sum(axis=1)).ravel()
    return np.einsum('ij,ij->i', M, M)


def frobenius_norm_sq(A):
    return float(row_norms_sq(A).sum())


def l1to2_norm_sq(A):
    '''
    ∥Aᵀ∥²_{1→2}, the largest squared row norm of A.
    '''
    return float(row_norms_sq(A).max())


def row_energy_ratio(A):
    '''
    The tight row-energy ratio ρ = max_i ∥a_i∥² / ((1/n) Σ_j ∥a_j∥²).

    Raises:
        ValueError if every row of A is zero
    '''
    norms = row_norms_sq(A)
    total = norms.sum()
    if total <= 0:
        raise ValueError('Row energy ratio is undefined for an all-zero matrix')
    return float(norms.max() / (total / len(norms)))


def small_gram(A):
    '''
    Dense Gram matrix on the smaller side of A: AAᵀ when n ≤ d, AᵀA otherwise.
    Both share the nonzero eigenvalues of AᵀA.
    '''
    M = as_matrix(A)
    n, d = M.shape
    G = M @ M.T if n <= d else M.T @ M
    if sp.issparse(G):
        G = G.toarray()
    return np.asarray(G)


def _clamp(values, scale=None):
    '''
    Clamps float noise below zero. `values` must be sorted nonincreasing.
    '''
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return values
    scale = max(values[0], 0.) if scale is None else scale
    if values[-1] < -PSD_CLAMP_TOL * scale:
        raise SpectrumError(f'Eigenvalue estimate {values[-1]:.3e} of a Gram matrix is '
                            f'negative beyond tolerance (σ₁ = {scale:.3e})')
    return np.maximum(values, 0.)


def full_spectrum(A):
    '''
    All d eigenvalues of AᵀA, nonincreasing, from a dense decomposition of the
    smaller Gram matrix padded with exact zeros.
    '''
    M = as_matrix(A)
    d = M.shape[1]
    values = scipy.linalg.eigvalsh(small_gram(M))[::-1]
    values = _clamp(values)
    return np.concatenate([values, np.zeros(d - len(values))])


def gram_norm_sq(A):
    '''
    ∥A∥² computed as ∥AAᵀ∥ through a dense decomposition of the smaller Gram
    matrix. Exact; intended for row blocks.
    '''
    return float(full_spectrum(A)[0])


def _rayleigh(M, x):
    y = M @ x
    return float(y @ y)


def _power_iteration(M, tol, max_iter):
    d = M.shape[1]
    x = np.ones(d) / np.sqrt(d)
    theta = _rayleigh(M, x)
    if theta <= 0.:
        # all-ones start in the null space
        x = np.random.default_rng(POWER_FALLBACK_SEED).standard_normal(d)
        x /= np.linalg.norm(x)
        theta = _rayleigh(M, x)
        if theta <= 0.:
            return 0.

    y = M.T @ (M @ x)
    residual = float('inf')
    for iteration in range(1, max_iter + 1):
        x = y / np.linalg.norm(y)
        y = M.T @ (M @ x)
        theta = float(x @ y)
        # |θ − λ| ≤ ∥AᵀAx − θx∥ for some eigenvalue λ of AᵀA
        residual = float(np.linalg.norm(y - theta * x))
        if residual <= tol * theta:
            logger.debug(f'Power iteration converged in {iteration} iterations')
            return theta

    raise ConvergenceError(f'Power iteration did not converge in {max_iter} iterations '
                           f'(residual {residual:.3e})', x, residual, max_iter)


def spectral_norm_sq(A, tol=POWER_ITERATION_TOL, max_iter=POWER_ITERATION_MAX_ITER):
    '''
    Returns ∥A∥², the largest eigenvalue of AᵀA.

    Small matrices (min(n, d) ≤ FULL_NORM_THRESHOLD) use a dense
    decomposition. Larger ones use power iteration on AᵀA from the normalized
    all-ones vector, switching to a fixed-seed Gaussian start if the all-ones
    vector lies in the null space. The iteration stops once the eigen-residual
    ∥AᵀAx − θx∥ of the Rayleigh quotient θ is at most `tol`·θ, which bounds the
    relative distance of θ to an eigenvalue of AᵀA.

    Args:
        A: matrix or forward operator
        tol: relative stopping tolerance, > 0
        max_iter: iteration cap, ≥ 1
    Returns:
        ∥A∥² as a float
    Raises:
        ConvergenceError carrying the last iterate and residual
    '''
    if tol <= 0:
        raise ValueError(f'tol must be positive, got {tol}')
    if max_iter < 1:
        raise ValueError(f'max_iter must be at least 1, got {max_iter}')
    M = as_matrix(A)
    if min(M.shape) <= FULL_NORM_THRESHOLD:
        return gram_norm_sq(M)
    return _power_iteration(M, tol, max_iter)


def _lanczos(M, k):
    '''
    Lanczos on AᵀA with full reorthogonalization. Returns the top-k Ritz values
    and whether the Krylov space became invariant before k values were found.
    '''
    d = M.shape[1]
    steps = min(d, max(2 * k, k + LANCZOS_EXTRA_STEPS))
    Q = np.zeros((d, steps))
    alphas = []
    betas = []

    q = np.random.default_rng(LANCZOS_SEED).standard_normal(d)
    q /= np.linalg.norm(q)
    for j in range(steps):
        Q[:, j] = q
        w = M.T @ (M @ q)
        alpha = float(q @ w)
        alphas.append(alpha)
        basis = Q[:, :j + 1]
        # twice is enough
        w -= basis @ (basis.T @ w)
        w -= basis @ (basis.T @ w)
        beta = float(np.linalg.norm(w))
        if j == steps - 1:
            break
        if beta <= LANCZOS_BREAKDOWN_TOL * max(abs(a) for a in alphas):
            logger.debug(f'Lanczos breakdown after {j + 1} steps')
            break
        betas.append(beta)
        q = w / beta

    if len(alphas) == 1:
        ritz = np.array(alphas)
    else:
        ritz = scipy.linalg.eigh_tridiagonal(np.array(alphas), np.array(betas),
                                             eigvals_only=True)
    ritz = np.sort(ritz)[::-1]
    return ritz[:k], len(ritz) < k


def eigenspectrum(A, k):
    '''
    Top-k eigenvalues of AᵀA.

    When k = d and d ≤ FULL_SPECTRUM_THRESHOLD the dense decomposition is used
    and the result is flagged exact. Otherwise Lanczos with full
    reorthogonalization runs from a fixed-seed start vector; if it breaks down
    early, fewer than k values come back and the result is flagged degraded.

    Args:
        A: matrix or forward operator with d columns
        k: number of eigenvalues, 1 ≤ k ≤ d
    Returns:
        Spectrum
    '''
    M = as_matrix(A)
    d = M.shape[1]
    if not 1 <= k <= d:
        raise ValueError(f'k must lie in [1, {d}], got {k}')

    if k == d and d <= FULL_SPECTRUM_THRESHOLD:
        values = full_spectrum(M)
        exact, degraded = True, False
    else:
        values, degraded = _lanczos(M, k)
        values = _clamp(values)
        exact = False

    shortfall = float(values.sum() - frobenius_norm_sq(M))
    return Spectrum(values=values, exact=exact, degraded=degraded, trace_shortfall=shortfall)
