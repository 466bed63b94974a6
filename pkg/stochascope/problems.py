'''
Regularized least-squares problems

    min_x (1/2n)∥A x − b∥² + λ g(D x) + γ h(x),    b = A x† + w,

their objective and gradients, and test-problem synthesis.
'''

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .linalg import as_matrix
from .operators import ForwardOperator
from .prox import RegularizerSpec, prox_conjugate_l1

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Problem():
    '''
    Attributes
    ----------
    A : ForwardOperator
        measurement operator, n × d
    b : numpy.ndarray
        measurements, length n
    x_true : numpy.ndarray or None
        ground truth x†, enables estimation errors
    reg : RegularizerSpec
        λ g(D ·) + γ h(·)
    noise_norm : float or None
        ∥w∥ when known
    true_residual : numpy.ndarray or None
        b − A x†, filled in when x_true is given
    '''
    A: ForwardOperator
    b: np.ndarray
    x_true: np.ndarray = None
    reg: RegularizerSpec = RegularizerSpec()
    noise_norm: float = None
    true_residual: np.ndarray = None

    def __post_init__(self):
        if not isinstance(self.A, ForwardOperator):
            object.__setattr__(self, 'A', ForwardOperator(self.A, 'matrix'))
        b = np.asarray(self.b, dtype=float).ravel()
        if b.size != self.n:
            raise ValueError(f'b has length {b.size}, expected {self.n}')
        object.__setattr__(self, 'b', b)
        if self.x_true is not None:
            x_true = np.asarray(self.x_true, dtype=float).ravel()
            if x_true.size != self.d:
                raise ValueError(f'x_true has length {x_true.size}, expected {self.d}')
            object.__setattr__(self, 'x_true', x_true)
            object.__setattr__(self, 'true_residual', b - self.A.matvec(x_true))
        self.reg.check_dimension(self.d)

    @property
    def n(self):
        return self.A.n

    @property
    def d(self):
        return self.A.d

    def est_error(self, x):
        '''
        ∥x − x†∥², or nan without a ground truth.
        '''
        if self.x_true is None:
            return float('nan')
        return float(np.sum((x - self.x_true) ** 2))

    def with_reg(self, reg):
        return Problem(self.A, self.b, self.x_true, reg, self.noise_norm)


def data_fidelity(problem, x):
    r = problem.A.matvec(x) - problem.b
    return 0.5 * float(r @ r) / problem.n


def objective(problem, x):
    '''
    (1/2n)∥A x − b∥² + λ∥D x∥₁ + γ h(x); indicator terms are +inf off their set.
    '''
    return data_fidelity(problem, x) + problem.reg.value(x)


def full_gradient(problem, x):
    '''
    ∇f(x) = (1/n) Aᵀ(A x − b).
    '''
    return problem.A.rmatvec(problem.A.matvec(x) - problem.b) / problem.n


def block_gradient(problem, rows, x, scale):
    '''
    scale·(S A)ᵀ(S A x − S b) for the rows in `rows`. Partition sampling uses
    scale = K/n and with-replacement sampling scale = 1/m; both make the
    estimator unbiased.
    '''
    M = problem.A.matrix
    block = M[rows]
    return scale * np.asarray(block.T @ (block @ x - problem.b[rows])).ravel()


def backprojection(problem):
    '''
    x⁰ = Aᵀb/n.
    '''
    return problem.A.rmatvec(problem.b) / problem.n


def synthesize_problem(A, x_true, snr=None, seed=None, reg=None):
    '''
    Builds b = A x† + w with i.i.d. Gaussian noise w rescaled so that
    log₁₀(∥A x†∥²/∥w∥²) equals `snr` exactly.

    Args:
        A: ForwardOperator
        x_true: ground truth x†
        snr: target SNR in log₁₀ units, None for noiseless data
        seed: noise seed, anything numpy.random.default_rng accepts
        reg: RegularizerSpec, none by default
    Returns:
        Problem
    '''
    if not isinstance(A, ForwardOperator):
        A = ForwardOperator(A, 'matrix')
    x_true = np.asarray(x_true, dtype=float).ravel()
    clean = A.matvec(x_true)
    if snr is None:
        b, noise_norm = clean, 0.
    else:
        signal_sq = float(clean @ clean)
        if signal_sq <= 0:
            raise ValueError('Cannot set an SNR for a zero signal A x†')
        w = np.random.default_rng(seed).standard_normal(A.n)
        noise_norm = np.sqrt(signal_sq / 10. ** snr)
        w *= noise_norm / np.linalg.norm(w)
        b = clean + w
    logger.info(f'Synthesized {A.label} problem, noise norm {noise_norm:.4g}')
    return Problem(A, b, x_true, reg or RegularizerSpec(), noise_norm)


def measured_snr(problem):
    '''
    log₁₀(∥A x†∥²/∥b − A x†∥²), inf for noiseless data.
    '''
    if problem.x_true is None:
        raise ValueError('SNR needs a ground truth')
    noise_sq = float(problem.true_residual @ problem.true_residual)
    clean = problem.b - problem.true_residual
    if noise_sq == 0:
        return float('inf')
    return float(np.log10(float(clean @ clean) / noise_sq))


def phantom_image(d1, d2):
    '''
    A piecewise-constant nonnegative d1 × d2 test image (a background plate, two
    rectangles and a disk), vectorized column by column.
    '''
    if d1 < 2 or d2 < 2:
        raise ValueError(f'Phantom needs d1, d2 ≥ 2, got {d1}x{d2}')
    u, v = np.meshgrid(np.linspace(0., 1., d1), np.linspace(0., 1., d2), indexing='ij')
    image = np.zeros((d1, d2))
    image[(u > 0.1) & (u < 0.9) & (v > 0.1) & (v < 0.9)] = 0.2
    image[(u > 0.2) & (u < 0.45) & (v > 0.2) & (v < 0.7)] = 0.6
    image[(u > 0.6) & (u < 0.8) & (v > 0.15) & (v < 0.4)] = 1.
    image[(u - 0.65) ** 2 + (v - 0.7) ** 2 < 0.15 ** 2] = 0.8
    return image.ravel(order='F')


def is_identity(M):
    M = as_matrix(M)
    n, d = M.shape
    if n != d:
        return False
    if sp.issparse(M):
        return (M != sp.identity(n, format='csr')).nnz == 0
    return bool(np.array_equal(M, np.eye(n)))


def primal_dual_gap(problem, x, y):
    '''
    Duality gap of the TV denoising saddle problem

        min_x max_{|y| ≤ λ} (1/2n)∥x − b∥² + yᵀD x,

    i.e. objective(x) minus the dual value yᵀD b − (n/2)∥Dᵀy∥² at the
    projection of y onto the feasible dual set. Defined for A = I without an
    h term.
    '''
    if not is_identity(problem.A.matrix):
        raise ValueError('primal_dual_gap is implemented for A = I only')
    if problem.reg.has_h:
        raise ValueError('primal_dual_gap does not support an h term')
    reg = problem.reg
    y = prox_conjugate_l1(np.asarray(y, dtype=float), 1., reg.lam if reg.has_g else 0.)
    Dty = reg.apply_Dt(y)
    dual = float(y @ reg.apply_D(problem.b)) - 0.5 * problem.n * float(Dty @ Dty)
    return objective(problem, x) - dual
