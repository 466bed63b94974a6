'''
The stochastic acceleration (SA) factor Υ = K·L_f/L_b of a least-squares
objective f(x) = (1/2n)∥Ax − b∥² under a minibatch partition, together with
its lower bounds (α_ℓ, α_u, α_s, α_r, α_σ), its upper bound β, and the
expected-smoothness counterpart for with-replacement sampling.

Σᵢ σ(AᵀA, i) is always evaluated as ∥A∥_F².
'''

import logging
import math
from dataclasses import dataclass, asdict

import numpy as np

from .constants import (CERTIFIED_DELTA, HEURISTIC_DELTA, FULL_SPECTRUM_THRESHOLD,
                        SPECTRUM_ZERO_TOL, SA_CURVE_COLUMNS, EXPECTED_SA_COLUMNS)
from .linalg import (as_matrix, row_norms_sq, spectral_norm_sq, gram_norm_sq, full_spectrum,
                     eigenspectrum)
from .partitions import make_partition, check_partition, subset_operator
from .partitions import local_accumulated_coherence
from .workers import parallel_map

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class OperatorSummary():
    '''
    Partition-independent quantities of A, computed once and shared by every
    point of an SA curve.

    Attributes
    ----------
    n, d : int
        shape of A
    norm_sq : float
        ∥A∥²
    fro_sq : float
        ∥A∥_F²
    l1to2_sq : float
        ∥Aᵀ∥²_{1→2}
    rho : float
        tight row-energy ratio
    spectrum : numpy.ndarray or None
        all d eigenvalues of AᵀA when d ≤ FULL_SPECTRUM_THRESHOLD
    '''
    n: int
    d: int
    norm_sq: float
    fro_sq: float
    l1to2_sq: float
    rho: float
    spectrum: np.ndarray = None


def _operator_norm_sq(M):
    # A and its row blocks share one path so that K = 1 gives L_b = L_f
    if min(M.shape) <= FULL_SPECTRUM_THRESHOLD:
        return gram_norm_sq(M)
    return spectral_norm_sq(M)


def summarize_operator(A):
    M = as_matrix(A)
    n, d = M.shape
    norms = row_norms_sq(M)
    if norms.max() <= 0:
        raise ValueError('SA analysis is undefined for an all-zero operator')
    spectrum = full_spectrum(M) if d <= FULL_SPECTRUM_THRESHOLD else None
    # full_spectrum(M)[0] is gram_norm_sq(M)
    norm_sq = float(spectrum[0]) if spectrum is not None else _operator_norm_sq(M)
    return OperatorSummary(n=n, d=d, norm_sq=norm_sq, fro_sq=float(norms.sum()),
                           l1to2_sq=float(norms.max()), rho=float(norms.max() / norms.mean()),
                           spectrum=spectrum)


def _summary(A, summary):
    return summary if summary is not None else summarize_operator(A)


@dataclass(frozen=True)
class RandomPartitionBound():
    '''
    Lower bounds on Υ that hold for a uniformly random partition with the
    stated probability.
    '''
    delta: float
    alpha_r: float
    alpha_sigma: float
    probability: float
    in_window: bool


@dataclass(frozen=True, eq=False)
class SAReport():
    '''
    Υ and all of its bounds for one (A, partition) pair. Lower bounds satisfy
    α_s ≤ α_u ≤ α_ℓ ≤ Υ ≤ β. `random_bounds` holds the certified and the
    heuristic random-partition bounds, in that order.
    '''
    K: int
    scheme: str
    L_f: float
    L_b: float
    upsilon: float
    mu_ell: float
    alpha_ell: float
    alpha_u: float
    alpha_s: float
    beta: float
    rho: float
    random_bounds: tuple

    @property
    def certified(self):
        return self.random_bounds[0]

    @property
    def heuristic(self):
        return self.random_bounds[1]

    @property
    def alpha_r(self):
        return self.certified.alpha_r

    @property
    def alpha_sigma(self):
        return self.certified.alpha_sigma

    @property
    def beta_finite(self):
        return math.isfinite(self.beta)

    def to_row(self):
        '''
        Values in SA_CURVE_COLUMNS order.
        '''
        values = {'K': self.K, 'scheme': self.scheme, 'L_f': self.L_f, 'L_b': self.L_b,
                  'upsilon': self.upsilon, 'mu_ell': self.mu_ell,
                  'alpha_ell': self.alpha_ell, 'alpha_u': self.alpha_u,
                  'alpha_s': self.alpha_s, 'alpha_r_d15': self.certified.alpha_r,
                  'alpha_r_d2': self.heuristic.alpha_r, 'alpha_sigma': self.alpha_sigma,
                  'beta': self.beta, 'rho': self.rho}
        return [values[column] for column in SA_CURVE_COLUMNS]

    def to_dict(self):
        '''
        JSON-ready record. An infinite β is stored as null with
        `beta_finite` false.
        '''
        record = dict(zip(SA_CURVE_COLUMNS, self.to_row()))
        record['beta'] = self.beta if self.beta_finite else None
        record['beta_finite'] = self.beta_finite
        record['random_bounds'] = [asdict(bound) for bound in self.random_bounds]
        return record


@dataclass(frozen=True, eq=False)
class ExpectedSAReport():
    '''
    Expected smoothness and the SA lower bound for uniform with-replacement
    sampling of m rows.

    Attributes
    ----------
    m : int
        minibatch size
    L_f : float
        ∥A∥²/n
    L_e_bound : float
        (m−1)/(m(n−1))·L_f + (n−m)/(m(n−1))·∥Aᵀ∥²_{1→2}
    upsilon_e_lower : float
        1/((m−1)/(2(n−1)) + (n−m)/(2(n−1))·∥Aᵀ∥²_{1→2}/∥A∥²)
    upsilon_e_plugin : float
        (n/(2m))·L_f/L_e_bound, the factor evaluated at the L_e bound
    delta_free : bool
        always true; no probability statement is involved
    '''
    m: int
    L_f: float
    L_e_bound: float
    upsilon_e_lower: float
    upsilon_e_plugin: float
    delta_free: bool = True

    def to_row(self):
        return [getattr(self, column) for column in EXPECTED_SA_COLUMNS]

    def to_dict(self):
        return asdict(self)


def full_lipschitz(A):
    '''
    L_f = ∥A∥²/n, the gradient Lipschitz constant of (1/2n)∥Ax − b∥².
    '''
    M = as_matrix(A)
    return _operator_norm_sq(M) / M.shape[0]


def block_norms_sq(A, P):
    '''
    ∥S^k A∥² for every block of P.
    '''
    M = check_partition(A, P)
    return np.array([_operator_norm_sq(subset_operator(M, block)) for block in P.blocks])


def batch_lipschitz(A, P):
    '''
    L_b = (K/n)·max_k ∥S^k A∥², the Lipschitz constant of the worst minibatch
    function f_S(x) = (K/2n)∥S A x − S b∥².
    '''
    M = check_partition(A, P)
    return P.K / M.shape[0] * float(block_norms_sq(M, P).max())


def bound_alpha_ell(A, P, summary=None, mu_ell=None):
    '''
    α_ℓ = ∥A∥²/μ_ℓ(A, P).
    '''
    s = _summary(A, summary)
    mu_ell = local_accumulated_coherence(A, P) if mu_ell is None else mu_ell
    if mu_ell <= 0:
        raise ValueError('Local accumulated coherence is zero; α_ℓ is undefined')
    return s.norm_sq / mu_ell


def bound_alpha_u(A, K, summary=None):
    '''
    α_u = K∥A∥²/(n∥Aᵀ∥²_{1→2}).
    '''
    s = _summary(A, summary)
    return K * s.norm_sq / (s.n * s.l1to2_sq)


def bound_alpha_s(A, K, rho=None, summary=None):
    '''
    α_s = K σ(AᵀA, 1)/(ρ ∥A∥_F²). `rho` defaults to the tight row-energy ratio;
    any upper bound on it gives a valid, weaker bound.
    '''
    s = _summary(A, summary)
    rho = s.rho if rho is None else rho
    if rho < s.rho * (1 - 1e-12):
        raise ValueError(f'rho={rho} is below the row-energy ratio {s.rho}')
    return K * s.norm_sq / (rho * s.fro_sq)


def beta_index(n, K):
    '''
    The 1-based index ⌊n − n/K + 1⌋ of the eigenvalue in the denominator of β.
    '''
    return (n * K - n + K) // K


def bound_beta(A, K, summary=None):
    '''
    β(A, K) = σ(AᵀA, 1)/σ(AᵀA, ⌊n − n/K + 1⌋), with σ(AᵀA, k) = 0 for k > d.
    Returns math.inf when the denominator eigenvalue is zero (up to
    SPECTRUM_ZERO_TOL relative to σ₁).
    '''
    s = _summary(A, summary)
    if not 1 <= K <= s.n:
        raise ValueError(f'Need 1 ≤ K ≤ n, got K={K}, n={s.n}')
    index = beta_index(s.n, K)
    if index > s.d:
        return math.inf
    if s.spectrum is not None:
        top, denominator = s.spectrum[0], s.spectrum[index - 1]
    else:
        spectrum = eigenspectrum(A, index)
        if len(spectrum) < index:
            logger.warning(f'Spectrum degraded below index {index}; reporting β = inf')
            return math.inf
        top, denominator = spectrum[0], spectrum[index - 1]
    if denominator <= SPECTRUM_ZERO_TOL * top:
        return math.inf
    return float(top / denominator)


def random_partition_probability(d, delta):
    '''
    1 − d²(e/δ)^δ, clamped to [0, 1].
    '''
    if delta <= math.e:
        raise ValueError(f'delta must exceed e, got {delta}')
    log_failure = 2 * math.log(d) + delta * (1 - math.log(delta))
    return float(min(1., max(0., 1. - math.exp(min(log_failure, 700.)))))


def max_dim_for_delta(delta, min_prob):
    '''
    Largest d for which the random-partition bounds hold with probability at
    least `min_prob`: sqrt((1 − min_prob)/(e/δ)^δ).
    '''
    if not 0 < min_prob < 1:
        raise ValueError(f'min_prob must lie in (0, 1), got {min_prob}')
    if delta <= math.e:
        raise ValueError(f'delta must exceed e, got {delta}')
    return math.exp(0.5 * (math.log(1 - min_prob) - delta * (1 - math.log(delta))))


def bound_alpha_r(A, K, delta, summary=None):
    '''
    α_r = 1/(1/K + δ∥Aᵀ∥²_{1→2}/∥A∥²). The value is defined for any δ > 0; it is a
    probabilistic bound only for δ > e.
    '''
    if delta <= 0:
        raise ValueError(f'delta must be positive, got {delta}')
    s = _summary(A, summary)
    return 1. / (1. / K + delta * s.l1to2_sq / s.norm_sq)


def bound_alpha_sigma(A, K, delta, rho=None, summary=None):
    '''
    α_σ = 1/(1/K + δ(ρ/n)Σᵢσ(AᵀA, i)/σ(AᵀA, 1)).
    '''
    if delta <= 0:
        raise ValueError(f'delta must be positive, got {delta}')
    s = _summary(A, summary)
    rho = s.rho if rho is None else rho
    return 1. / (1. / K + delta * (rho / s.n) * s.fro_sq / s.norm_sq)


def in_validity_window(A, K, summary=None):
    '''
    Whether ∥A∥²/∥Aᵀ∥²_{1→2} ≤ K ≤ min(n, d).
    '''
    s = _summary(A, summary)
    return bool(s.norm_sq / s.l1to2_sq <= K <= min(s.n, s.d))


def random_partition_bounds(A, K, delta, summary=None):
    '''
    α_r and α_σ at one δ. Heuristic values with δ ≤ e carry probability 0.
    '''
    s = _summary(A, summary)
    probability = random_partition_probability(s.d, delta) if delta > math.e else 0.
    return RandomPartitionBound(delta=float(delta),
                                alpha_r=bound_alpha_r(A, K, delta, summary=s),
                                alpha_sigma=bound_alpha_sigma(A, K, delta, summary=s),
                                probability=probability,
                                in_window=in_validity_window(A, K, summary=s))


def sa_factor(A, P, summary=None, deltas=(CERTIFIED_DELTA, HEURISTIC_DELTA)):
    '''
    Computes the SA report of A under partition P.

    Args:
        A: matrix or forward operator
        P: Partition of the rows of A
        summary: OperatorSummary of A, recomputed when None
        deltas: δ values for the random-partition bounds, certified first
    Returns:
        SAReport
    '''
    M = check_partition(A, P)
    s = _summary(M, summary)
    K = P.K
    L_f = s.norm_sq / s.n
    # one block is the whole operator
    L_b = L_f if K == 1 else batch_lipschitz(M, P)
    mu_ell = local_accumulated_coherence(M, P)
    report = SAReport(K=K, scheme=P.descriptor, L_f=L_f, L_b=L_b, upsilon=K * L_f / L_b,
                      mu_ell=mu_ell,
                      alpha_ell=bound_alpha_ell(M, P, summary=s, mu_ell=mu_ell),
                      alpha_u=bound_alpha_u(M, K, summary=s),
                      alpha_s=bound_alpha_s(M, K, summary=s),
                      beta=bound_beta(M, K, summary=s),
                      rho=s.rho,
                      random_bounds=tuple(random_partition_bounds(M, K, delta, summary=s)
                                          for delta in deltas))
    logger.debug(f'K={K} {P.descriptor}: Υ={report.upsilon:.6g}, α_ℓ={report.alpha_ell:.6g}')
    return report


def _curve_point(job):
    M, scheme, K, seed, summary = job
    return sa_factor(M, make_partition(scheme, summary.n, K, seed=seed), summary=summary)


def sa_curve(A, scheme, K_list, seed=None, summary=None, threads=1):
    '''
    One SA report per K, all with the same scheme and seed.

    Args:
        A: matrix or forward operator
        scheme: 'interleaved', 'random' or 'consecutive'
        K_list: block counts, each ≤ n
        seed: seed of the random scheme
        summary: OperatorSummary of A, computed once when None
        threads: worker processes for the per-K computations
    Returns:
        list of SAReport in K_list order
    '''
    if not K_list:
        raise ValueError('K list must be nonempty')
    M = as_matrix(A)
    s = _summary(M, summary)
    for K in K_list:
        if not 1 <= K <= s.n:
            raise ValueError(f'Need 1 ≤ K ≤ n for every K, got K={K}, n={s.n}')
    reports = parallel_map(_curve_point, [(M, scheme, int(K), seed, s) for K in K_list],
                           threads=threads)
    logger.info(f'Computed {scheme} SA curve over {len(reports)} values of K')
    return reports


def expected_sa_with_replacement(A, m, summary=None):
    '''
    Expected smoothness bound and SA lower bound for minibatches of m rows
    drawn uniformly without repetition inside a batch, independently across
    iterations. Both formulas are evaluated as stated; the lower bound equals 2
    at m = n, so it compares iteration-count rates rather than giving a sharp
    speedup.

    Args:
        A: matrix or forward operator
        m: minibatch size, 1 ≤ m ≤ n
    Returns:
        ExpectedSAReport
    '''
    s = _summary(A, summary)
    n = s.n
    if not 1 <= m <= n:
        raise ValueError(f'Need 1 ≤ m ≤ n, got m={m}, n={n}')
    L_f = s.norm_sq / n
    if n == 1:
        L_e_bound = L_f
        lower = 2.
    else:
        L_e_bound = ((m - 1) / (m * (n - 1)) * L_f
                     + (n - m) / (m * (n - 1)) * s.l1to2_sq)
        lower = 1. / ((m - 1) / (2 * (n - 1))
                      + (n - m) / (2 * (n - 1)) * s.l1to2_sq / s.norm_sq)
    plugin = n / (2 * m) * L_f / L_e_bound
    return ExpectedSAReport(m=int(m), L_f=L_f, L_e_bound=L_e_bound,
                            upsilon_e_lower=lower, upsilon_e_plugin=plugin)


def expected_smoothness(A, m, summary=None):
    '''
    Expected smoothness of m-row minibatches drawn without repetition,
    n(m−1)/(m(n−1))·L_f + (n−m)/(m(n−1))·∥Aᵀ∥²_{1→2}. Equals L_f at m = n and
    the largest row energy at m = 1; this is the step-size constant, whereas
    ExpectedSAReport.L_e_bound keeps the printed normalization.
    '''
    s = _summary(A, summary)
    n = s.n
    if not 1 <= m <= n:
        raise ValueError(f'Need 1 ≤ m ≤ n, got m={m}, n={n}')
    if n == 1:
        return s.norm_sq
    return (n * (m - 1) / (m * (n - 1)) * s.norm_sq / n
            + (n - m) / (m * (n - 1)) * s.l1to2_sq)


def expected_sa_curve(A, m_list, summary=None):
    M = as_matrix(A)
    s = _summary(M, summary)
    return [expected_sa_with_replacement(M, int(m), summary=s) for m in m_list]


def restricted_strong_convexity(A):
    '''
    μ_c over the full space: σ_min(AᵀA)/n, which is zero when n < d.
    '''
    M = as_matrix(A)
    n, d = M.shape
    if n < d:
        return 0.
    return float(full_spectrum(M)[-1] / n)


def pgd_envelope(mu_c, L, err0, iterations):
    '''
    (1 − μ_c/L)^i · err0 for every i in `iterations`.
    '''
    return err0 * (1. - mu_c / L) ** np.asarray(iterations, dtype=float)


def sgd_envelope(mu_c, L_e, err0, iterations):
    '''
    (1 − μ_c/L_e)^{i/2} · err0 for every i in `iterations`.
    '''
    return err0 * (1. - mu_c / L_e) ** (np.asarray(iterations, dtype=float) / 2.)


@dataclass(frozen=True)
class IterationCounts():
    full: float
    stochastic: float
    datapass_ratio: float


def iteration_counts(L_f, L_e, mu_c, err0, eps, n, m):
    '''
    Iterations needed to reach accuracy `eps` from `err0` by full gradient
    descent, (L_f/μ_c)·log(err0/eps), and by minibatch SGD,
    (2L_e/μ_c)·log(err0/eps), plus the ratio of their datapass costs.
    '''
    if mu_c <= 0:
        raise ValueError('Iteration counts need a positive strong convexity constant')
    if not 0 < eps < err0:
        raise ValueError(f'Need 0 < eps < err0, got eps={eps}, err0={err0}')
    log_ratio = math.log(err0 / eps)
    full = L_f / mu_c * log_ratio
    stochastic = 2 * L_e / mu_c * log_ratio
    return IterationCounts(full=full, stochastic=stochastic,
                           datapass_ratio=(n / m) * full / stochastic)
