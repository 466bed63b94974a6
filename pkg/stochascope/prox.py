'''
Proximal maps and projections for composite objectives

    f(x) + λ g(D x) + γ h(x)

with g either the ℓ1 norm or absent, and h one of the closed-form terms in
H_TERMS. All functions are pure.
'''

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .constants import G_TERMS, H_TERMS, TV_INNER_ITERS
from .linalg import as_matrix, spectral_norm_sq
from .operators import diff_operator

logger = logging.getLogger(__name__)

# Slack for indicator feasibility checks in objective evaluation.
FEASIBILITY_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class ProxTerm():
    '''
    A weighted simple function with a closed-form prox.

    Attributes
    ----------
    kind : str
        one of H_TERMS
    weight : float
        nonnegative multiplier; zero turns the term off
    lo, hi : float or numpy.ndarray
        bounds of the 'box' term
    mask : numpy.ndarray of bool
        allowed support of the 'support_indicator' term
    '''
    kind: str = 'none'
    weight: float = 1.
    lo: object = None
    hi: object = None
    mask: object = None

    def __post_init__(self):
        if self.kind not in H_TERMS:
            raise ValueError(f'Unsupported prox term {self.kind!r}; expected one of {H_TERMS}')
        if self.weight < 0:
            raise ValueError(f'Prox term weight must be nonnegative, got {self.weight}')
        if self.kind == 'box':
            if self.lo is None or self.hi is None:
                raise ValueError('Box term needs both lo and hi')
            if np.any(np.asarray(self.lo) > np.asarray(self.hi)):
                raise ValueError('Box term needs lo ≤ hi')
        if self.kind == 'support_indicator':
            if self.mask is None:
                raise ValueError('Support indicator needs a mask')
            object.__setattr__(self, 'mask', np.asarray(self.mask, dtype=bool))

    @property
    def active(self):
        return self.kind != 'none' and self.weight > 0

    @property
    def is_indicator(self):
        return self.kind in ('nonneg_indicator', 'box', 'support_indicator')


def prox_scaled(term, v, step):
    '''
    prox of step·term at v: argmin_x (1/2 step)∥x − v∥² + term(x).

    ℓ1 soft-thresholds at weight·step; indicators project (their prox does
    not depend on the step); an inactive term is the identity.
    '''
    if step <= 0:
        raise ValueError(f'Prox step must be positive, got {step}')
    v = np.asarray(v, dtype=float)
    if not term.active:
        return v.copy()
    if term.kind == 'l1':
        threshold = term.weight * step
        return np.sign(v) * np.maximum(np.abs(v) - threshold, 0.)
    if term.kind == 'nonneg_indicator':
        return np.maximum(v, 0.)
    if term.kind == 'box':
        return np.clip(v, term.lo, term.hi)
    if term.kind == 'support_indicator':
        if term.mask.shape != v.shape:
            raise ValueError(f'Support mask shape {term.mask.shape} does not match {v.shape}')
        return np.where(term.mask, v, 0.)
    raise ValueError(f'Unsupported prox term {term.kind!r}')


def term_value(term, x):
    '''
    term(x): weight·∥x∥₁ for ℓ1, 0 or inf for indicators.
    '''
    if not term.active:
        return 0.
    if term.kind == 'l1':
        return term.weight * float(np.abs(x).sum())
    return 0. if np.allclose(prox_scaled(term, x, 1.), x, rtol=0., atol=FEASIBILITY_TOL) else np.inf


def prox_conjugate_l1(y, alpha, lam):
    '''
    prox of (λ∥·∥₁)* with step alpha: projection onto the ℓ∞ ball of radius λ.
    '''
    if alpha <= 0:
        raise ValueError(f'Dual step must be positive, got {alpha}')
    if lam < 0:
        raise ValueError(f'lambda must be nonnegative, got {lam}')
    return np.clip(y, -lam, lam)


@dataclass(frozen=True, eq=False)
class RegularizerSpec():
    '''
    λ g(D x) + γ h(x).

    Attributes
    ----------
    g : str
        'l1' or 'none'
    lam : float
        λ ≥ 0
    D : scipy.sparse matrix or None
        linear map inside g, None meaning the identity
    h : ProxTerm
        the simple term, weight γ
    D_norm_sq : float
        ∥D∥², filled in when D is given
    '''
    g: str = 'none'
    lam: float = 0.
    D: object = None
    h: ProxTerm = ProxTerm()
    D_norm_sq: float = None

    def __post_init__(self):
        if self.g not in G_TERMS:
            raise ValueError(f'Unsupported g term {self.g!r}; expected one of {G_TERMS}')
        if self.lam < 0:
            raise ValueError(f'lambda must be nonnegative, got {self.lam}')
        if self.D is None:
            object.__setattr__(self, 'D_norm_sq', 1.)
        else:
            object.__setattr__(self, 'D', as_matrix(self.D))
            if self.D_norm_sq is None:
                object.__setattr__(self, 'D_norm_sq', spectral_norm_sq(self.D))

    @classmethod
    def total_variation(cls, lam, image_shape, h=None):
        '''
        Anisotropic TV λ∥D x∥₁ on an image of `image_shape`, with ∥D∥² taken
        from the closed form.
        '''
        d1, d2 = image_shape
        return cls(g='l1', lam=lam, D=diff_operator(d1, d2), h=h or ProxTerm(),
                   D_norm_sq=diff_operator_norm_sq(d1, d2))

    @property
    def gamma(self):
        return self.h.weight if self.h.kind != 'none' else 0.

    @property
    def has_g(self):
        return self.g == 'l1' and self.lam > 0

    @property
    def has_h(self):
        return self.h.active

    @property
    def D_is_identity(self):
        return self.D is None

    @property
    def g_term(self):
        '''
        λ∥·∥₁ as a ProxTerm, for identity D.
        '''
        return ProxTerm('l1', self.lam) if self.has_g else ProxTerm()

    def apply_D(self, x):
        return x if self.D is None else np.asarray(self.D @ x).ravel()

    def apply_Dt(self, y):
        return y if self.D is None else np.asarray(self.D.T @ y).ravel()

    def check_dimension(self, d):
        if self.D is not None and self.D.shape[1] != d:
            raise ValueError(f'D has {self.D.shape[1]} columns, expected {d}')
        if self.h.kind == 'support_indicator' and self.h.mask.size != d:
            raise ValueError(f'Support mask has {self.h.mask.size} entries, expected {d}')

    def value(self, x):
        '''
        λ g(D x) + γ h(x).
        '''
        total = term_value(self.h, x)
        if self.has_g:
            total += self.lam * float(np.abs(self.apply_D(x)).sum())
        return total

    def to_dict(self, image_shape=None):
        record = {'g': self.g, 'lam': self.lam, 'h': self.h.kind, 'gamma': self.h.weight}
        if self.D is None:
            record['D'] = 'identity'
        elif image_shape is not None and sp.issparse(self.D) and \
                (self.D != diff_operator(*image_shape)).nnz == 0:
            record['D'] = 'diff'
        else:
            raise ValueError('Only identity and image finite-difference D can be serialized')
        if self.h.kind == 'box':
            record['lo'] = np.asarray(self.h.lo, dtype=float).tolist()
            record['hi'] = np.asarray(self.h.hi, dtype=float).tolist()
        if self.h.kind == 'support_indicator':
            record['support'] = np.flatnonzero(self.h.mask).tolist()
        return record

    @classmethod
    def from_dict(cls, record, d, image_shape=None):
        '''
        Inverse of to_dict for a problem with d unknowns.
        '''
        kind = record.get('h', 'none')
        kwargs = {'kind': kind, 'weight': float(record.get('gamma', 1.))}
        if kind == 'box':
            kwargs['lo'] = _bound(record['lo'])
            kwargs['hi'] = _bound(record['hi'])
        if kind == 'support_indicator':
            mask = np.zeros(d, dtype=bool)
            mask[np.asarray(record['support'], dtype=np.int64)] = True
            kwargs['mask'] = mask
        h = ProxTerm(**kwargs)
        lam = float(record.get('lam', 0.))
        if record.get('D', 'identity') == 'diff':
            if image_shape is None:
                raise ValueError('A finite-difference regularizer needs an image shape')
            return cls.total_variation(lam, image_shape, h=h)
        return cls(g=record.get('g', 'none'), lam=lam, h=h)


def _bound(value):
    # scalar bounds stay scalars, per-pixel bounds come back as arrays
    value = np.asarray(value, dtype=float)
    return float(value) if value.ndim == 0 else value


def diff_operator_norm_sq(d1, d2):
    '''
    ∥D∥² of the d1 × d2 anisotropic difference operator: DᵀD is a Kronecker
    sum of path-graph Laplacians, so ∥D∥² = 4 + 2cos(π/d1) + 2cos(π/d2) < 8.
    '''
    return 4. + 2. * np.cos(np.pi / d1) + 2. * np.cos(np.pi / d2)


def _tv_objective(x, v, lam, D):
    return 0.5 * float(np.sum((x - v) ** 2)) + lam * float(np.abs(D @ x).sum())


def tv_prox_fgp(v, lam, inner_iters=TV_INNER_ITERS, D=None, image_shape=None, project=None,
                D_norm_sq=None, history=False):
    '''
    Approximates argmin_x (1/2)∥x − v∥² + λ∥D x∥₁ (+ indicator of a convex set)
    by the fast gradient projection method on the dual: dual variables q with
    |q| ≤ λ, primal recovery x = P(v − Dᵀq), step 1/∥D∥², FISTA momentum, and a
    fixed number of iterations. The iterate of the last step is returned.

    Args:
        v: image vector
        lam: λ ≥ 0
        inner_iters: iteration budget, ≥ 1
        D: difference operator; built from `image_shape` when None
        image_shape: (d1, d2), needed when D is None
        project: optional projection P onto a convex constraint set
        D_norm_sq: ∥D∥², computed when None
        history: also return the primal objective after every iteration
    Returns:
        x, or (x, list of objective values) when `history` is set
    '''
    if inner_iters < 1:
        raise ValueError(f'inner_iters must be at least 1, got {inner_iters}')
    if lam < 0:
        raise ValueError(f'lambda must be nonnegative, got {lam}')
    v = np.asarray(v, dtype=float)
    if D is None:
        if image_shape is None:
            raise ValueError('tv_prox_fgp needs D or image_shape')
        D = diff_operator(*image_shape)
        if D_norm_sq is None:
            D_norm_sq = diff_operator_norm_sq(*image_shape)
    D = as_matrix(D)
    if D_norm_sq is None:
        D_norm_sq = spectral_norm_sq(D)
    project = project or (lambda z: z)

    def primal(q):
        return project(v - np.asarray(D.T @ q).ravel())

    if lam == 0:
        x = project(v.copy())
        return (x, [_tv_objective(x, v, lam, D)]) if history else x

    q = np.zeros(D.shape[0])
    s = q.copy()
    t = 1.
    values = []
    for _ in range(inner_iters):
        x = primal(s)
        q_next = np.clip(s + np.asarray(D @ x).ravel() / D_norm_sq, -lam, lam)
        t_next = (1. + np.sqrt(1. + 4. * t * t)) / 2.
        s = q_next + ((t - 1.) / t_next) * (q_next - q)
        q, t = q_next, t_next
        if history:
            values.append(_tv_objective(primal(q), v, lam, D))

    x = primal(q)
    return (x, values) if history else x
