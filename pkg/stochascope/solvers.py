'''
Deterministic and stochastic proximal solvers for

    min_x (1/2n)∥A x − b∥² + λ g(D x) + γ h(x).

Every solver takes a Problem and a SolverConfig and returns the final iterate
together with a Trace. Trace epochs count datapasses, one datapass being n
row-gradient evaluations: a full gradient costs 1, a step on one of K
partition blocks 1/K, a with-replacement minibatch of m rows m/n.
'''

import logging
import math
import time

import numpy as np

from .constants import DIVERGENCE_GUARD, SVRG_STEP_FRACTION
from .errors import ConfigError, DivergenceError
from .partitions import make_partition
from .problems import backprojection, block_gradient, full_gradient, objective
from .prox import ProxTerm, prox_conjugate_l1, prox_scaled, tv_prox_fgp
from .safactor import batch_lipschitz, expected_smoothness, full_lipschitz
from .traces import Trace, TraceRecord

logger = logging.getLogger(__name__)


class _Recorder():
    '''
    Appends trace records and enforces the divergence guard. A caller-supplied
    trace keeps the records written before a solver fails.
    '''

    def __init__(self, problem, config, trace=None):
        self.problem = problem
        self.trace = trace if trace is not None else Trace(config)
        self.start = time.perf_counter()

    def __call__(self, epoch, iteration, x, residual=float('nan')):
        value = objective(self.problem, x)
        if math.isnan(value) or value > DIVERGENCE_GUARD:
            raise DivergenceError(self.trace.config.algorithm, iteration, value)
        self.trace.append(TraceRecord(epoch=float(epoch), iteration=int(iteration),
                                      objective=value,
                                      est_error=self.problem.est_error(x),
                                      wall_ms=(time.perf_counter() - self.start) * 1e3,
                                      residual=residual))

    def finish(self, x, dual=None):
        self.trace.dual = dual
        last = self.trace.records[-1]
        logger.info(f'{self.trace.config.name} ({self.trace.config.algorithm}) finished at '
                    f'epoch {last.epoch:g}: objective {last.objective:.6g}')
        return x, self.trace


def _constraint_projection(problem):
    h = problem.reg.h
    if h.active and not h.is_indicator:
        return None
    return lambda z: prox_scaled(h, z, 1.)


def initial_point(problem, config):
    '''
    Backprojection Aᵀb/n (or zeros), projected onto the constraint set of h.
    '''
    x = backprojection(problem) if config.x0 == 'backprojection' else np.zeros(problem.d)
    h = problem.reg.h
    if h.active and h.is_indicator:
        x = prox_scaled(h, x, 1.)
    return x


def single_prox_term(problem, algorithm):
    '''
    The one closed-form prox the proximal-gradient solvers apply: λ∥·∥₁ with
    identity D, or the h term. Raises ConfigError for anything else.
    '''
    reg = problem.reg
    if reg.has_g and reg.has_h:
        raise ConfigError(f'{algorithm} supports either the g term or the h term, not both')
    if reg.has_g:
        if not reg.D_is_identity:
            raise ConfigError(f'{algorithm} needs D = I for the g term; use fista, pdhg or acc_pd_sgd')
        return reg.g_term
    return reg.h if reg.has_h else ProxTerm()


def _record_interval(config, default):
    return config.record_every or default


def _sequence_value(value, index, default):
    if value is None:
        return default
    if isinstance(value, tuple):
        return float(value[min(index, len(value) - 1)])
    return float(value)


def pgd(problem, config, trace=None):
    '''
    Proximal gradient descent, x ← prox_η[x − η∇f(x)], default η = 1/L_f.
    One record per iteration.
    '''
    term = single_prox_term(problem, 'pgd')
    eta = config.step or 1. / full_lipschitz(problem.A)
    x = initial_point(problem, config)
    record = _Recorder(problem, config, trace)
    record(0, 0, x)
    every = _record_interval(config, 1)
    for it in range(1, config.epochs + 1):
        x = prox_scaled(term, x - eta * full_gradient(problem, x), eta)
        if it % every == 0 or it == config.epochs:
            record(it, it, x)
    return record.finish(x)


def _fista_prox(problem, config):
    reg = problem.reg
    if reg.D_is_identity or not reg.has_g:
        term = single_prox_term(problem, 'fista')
        return lambda v, eta: prox_scaled(term, v, eta)
    project = _constraint_projection(problem)
    if project is None:
        raise ConfigError('fista with a D ≠ I regularizer supports only indicator h terms')
    return lambda v, eta: tv_prox_fgp(v, reg.lam * eta, inner_iters=config.tv_inner_iters,
                                      D=reg.D, project=project, D_norm_sq=reg.D_norm_sq)


def fista(problem, config, trace=None):
    '''
    FISTA with momentum t_{k+1} = (1 + √(1 + 4t_k²))/2 and default step 1/L_f.
    A g term with D ≠ I is handled by the dual FGP prox, with h restricted to
    indicators. One record per iteration.
    '''
    prox = _fista_prox(problem, config)
    eta = config.step or 1. / full_lipschitz(problem.A)
    x = initial_point(problem, config)
    y = x.copy()
    t = 1.
    record = _Recorder(problem, config, trace)
    record(0, 0, x)
    every = _record_interval(config, 1)
    for it in range(1, config.epochs + 1):
        x_next = prox(y - eta * full_gradient(problem, y), eta)
        t_next = (1. + math.sqrt(1. + 4. * t * t)) / 2.
        y = x_next + ((t - 1.) / t_next) * (x_next - x)
        x, t = x_next, t_next
        if it % every == 0 or it == config.epochs:
            record(it, it, x)
    return record.finish(x)


def _partition(problem, config):
    if config.K > problem.n:
        raise ConfigError(f'K={config.K} exceeds the number of rows n={problem.n}')
    seed = config.partition_seed if config.partition_seed is not None else config.seed
    return make_partition(config.scheme, problem.n, config.K, seed=seed)


def minibatch_sgd(problem, config, trace=None):
    '''
    Proximal minibatch SGD, x ← prox_η[x − η∇f_S(x)].

    With partition sampling S is one of K blocks chosen uniformly, the
    gradient is scaled by K/n and the default step is 1/L_b. With
    with-replacement sampling S is a uniformly drawn m-subset, the gradient is
    scaled by 1/m and the default step is one over the expected-smoothness
    bound. `epochs` counts datapasses; one record per datapass.
    '''
    term = single_prox_term(problem, 'minibatch_sgd')
    rng = np.random.default_rng(config.rng_seed)
    n = problem.n
    if config.sampling == 'partition':
        partition = _partition(problem, config)
        eta = config.step or 1. / batch_lipschitz(problem.A, partition)
        per_epoch = partition.K
        scale = partition.K / n

        def draw():
            return partition.blocks[rng.integers(partition.K)]

        def epoch_of(it):
            return it / partition.K
    else:
        m = config.m
        if m > n:
            raise ConfigError(f'Minibatch size m={m} exceeds n={n}')
        eta = config.step or 1. / expected_smoothness(problem.A, m)
        per_epoch = math.ceil(n / m)
        scale = 1. / m

        def draw():
            return np.sort(rng.choice(n, size=m, replace=False))

        def epoch_of(it):
            return it * m / n

    x = initial_point(problem, config)
    record = _Recorder(problem, config, trace)
    record(0, 0, x)
    every = _record_interval(config, per_epoch)
    total = config.epochs * per_epoch
    for it in range(1, total + 1):
        rows = draw()
        x = prox_scaled(term, x - eta * block_gradient(problem, rows, x, scale), eta)
        if it % every == 0 or it == total:
            record(epoch_of(it), it, x)
    return record.finish(x)


def prox_svrg(problem, config, trace=None):
    '''
    Proximal SVRG over a K-block partition. Each outer loop takes a snapshot x̃
    (one datapass, which also caches the K block gradients at x̃) and then K
    inner steps with the estimator ∇f_S(x) − ∇f_S(x̃) + ∇f(x̃) (one more
    datapass). Default step SVRG_STEP_FRACTION/L_b; one record per outer loop.
    '''
    term = single_prox_term(problem, 'prox_svrg')
    rng = np.random.default_rng(config.rng_seed)
    partition = _partition(problem, config)
    n, K = problem.n, partition.K
    scale = K / n
    eta = config.step or SVRG_STEP_FRACTION / batch_lipschitz(problem.A, partition)

    x = initial_point(problem, config)
    record = _Recorder(problem, config, trace)
    record(0, 0, x)
    iteration = 0
    for outer in range(1, config.epochs + 1):
        snapshot = x.copy()
        snapshot_grads = [block_gradient(problem, block, snapshot, scale)
                          for block in partition.blocks]
        mean_grad = np.mean(snapshot_grads, axis=0)
        for _ in range(K):
            k = rng.integers(K)
            v = (block_gradient(problem, partition.blocks[k], x, scale)
                 - snapshot_grads[k] + mean_grad)
            x = prox_scaled(term, x - eta * v, eta)
            iteration += 1
        record(2 * outer, iteration, x)
    return record.finish(x)


def pdhg_steps(problem, config):
    '''
    (σ, τ) for pdhg. The default policy takes σ = 1/∥D∥, the scaled policy
    σ = L_f/∥D∥; τ = 1/(L_f + σ∥D∥²) unless given.

    Raises:
        ConfigError if τ(L_f + σ∥D∥²) > 1
    '''
    L_f = full_lipschitz(problem.A)
    D_norm_sq = problem.reg.D_norm_sq
    D_norm = math.sqrt(D_norm_sq)
    sigma = _sequence_value(config.alpha, 0,
                            (L_f if config.step_policy == 'scaled' else 1.) / D_norm)
    tau = config.step or _sequence_value(config.eta, 0, 1. / (L_f + sigma * D_norm_sq))
    if tau * (L_f + sigma * D_norm_sq) > 1. + 1e-12:
        raise ConfigError(f'pdhg steps violate τ(L_f + σ∥D∥²) ≤ 1: σ={sigma:.4g}, τ={tau:.4g}, '
                          f'L_f={L_f:.4g}, ∥D∥²={D_norm_sq:.4g}')
    return sigma, tau


def pdhg(problem, config, trace=None):
    '''
    Primal-dual hybrid gradient for min_x max_y f(x) + γh(x) + yᵀDx − λg*(y),
    the gradient of f taken explicitly in the primal step:

        y ← prox_{λg*}(y + σ D x̄)
        x⁺ ← prox_{τγh}(x − τ(∇f(x) + Dᵀy))
        x̄ ← 2x⁺ − x

    One record (one datapass) per iteration, with the residual
    ∥x⁺ − x∥ + ∥y⁺ − y∥.
    '''
    reg = problem.reg
    sigma, tau = pdhg_steps(problem, config)
    lam = reg.lam if reg.has_g else 0.
    x = initial_point(problem, config)
    x_bar = x.copy()
    y = np.zeros_like(reg.apply_D(x))
    record = _Recorder(problem, config, trace)
    record(0, 0, x)
    every = _record_interval(config, 1)
    for it in range(1, config.epochs + 1):
        y_next = prox_conjugate_l1(y + sigma * reg.apply_D(x_bar), sigma, lam)
        x_next = prox_scaled(reg.h, x - tau * (full_gradient(problem, x) + reg.apply_Dt(y_next)),
                             tau)
        residual = float(np.linalg.norm(x_next - x) + np.linalg.norm(y_next - y))
        x_bar = 2. * x_next - x
        x, y = x_next, y_next
        if it % every == 0 or it == config.epochs:
            record(it, it, x, residual)
    return record.finish(x, dual=y)


def acc_pd_sgd_steps(problem, config, partition):
    '''
    Step sequences (α_l, η_l, θ_l) as callables of the inner-step counter l,
    which runs on across outer loops starting at 0. Defaults: α = 1/∥D∥
    (scaled policy: L_b/∥D∥), η = 1/(L_b + ∥D∥²α), θ = K/(K + 1).
    '''
    L_b = batch_lipschitz(problem.A, partition)
    D_norm_sq = problem.reg.D_norm_sq
    base = L_b if config.step_policy == 'scaled' else 1.
    K = partition.K

    def alpha(l):
        return _sequence_value(config.alpha, l, base / math.sqrt(D_norm_sq))

    def eta(l):
        if config.step is not None and config.eta is None:
            return config.step
        return _sequence_value(config.eta, l, 1. / (L_b + D_norm_sq * alpha(l)))

    def theta(l):
        return _sequence_value(config.theta, l, K / (K + 1.))

    return alpha, eta, theta


def katyusha_x_momentum(t, x_prev, v_prev, v_prev2):
    '''
    x^t = ((3t − 2)v^{t−1} + t x^{t−1} − (2t − 4)v^{t−2})/(2t + 2).
    '''
    return ((3 * t - 2) * v_prev + t * x_prev - (2 * t - 4) * v_prev2) / (2 * t + 2)


def acc_pd_sgd(problem, config, trace=None):
    '''
    Accelerated primal-dual SGD.

    N₀ outer loops (n_outer, default `epochs`) apply the Katyusha-X momentum
    to the snapshots v^t. Each outer loop resets x₀ = z₀ = x^t and y₀ = D x₀
    and runs N₁ inner steps (n_inner, default K), the step counter l running on
    across outer loops:

        y_{k+1} = prox_{λg*}(y_k + α_l D z_k)
        x_{k+1} = prox_{η_l γh}(x_k − η_l(Dᵀy_{k+1} + ∇f_S(x_k)))
        z_{k+1} = x_{k+1} + θ_l(x_{k+1} − x_k)

    with S a uniformly drawn partition block; then v^t = x_{N₁}. With
    `outer_momentum` off the extrapolation is skipped and x^t = v^{t−1}, which
    gives the plain restarted primal-dual SGD baseline.

    Returns v^{N₀}, the output of the last inner loop; x^{N₀} is only its
    starting point. One record per outer loop, N₁/K datapasses apart.
    '''
    reg = problem.reg
    rng = np.random.default_rng(config.rng_seed)
    partition = _partition(problem, config)
    K = partition.K
    scale = K / problem.n
    alpha, eta, theta = acc_pd_sgd_steps(problem, config, partition)
    n_outer = config.n_outer or config.epochs
    n_inner = config.n_inner or K
    lam = reg.lam if reg.has_g else 0.

    x_outer = initial_point(problem, config)
    v_prev, v_prev2 = x_outer.copy(), x_outer.copy()
    y = np.zeros_like(reg.apply_D(x_outer))
    record = _Recorder(problem, config, trace)
    record(0, 0, v_prev)
    iteration = 0
    for t in range(1, n_outer + 1):
        if config.outer_momentum:
            x_outer = katyusha_x_momentum(t, x_outer, v_prev, v_prev2)
        else:
            x_outer = v_prev.copy()
        x = x_outer.copy()
        z = x.copy()
        y = reg.apply_D(x).copy() if reg.has_g else np.zeros_like(y)
        residual = float('nan')
        for _ in range(n_inner):
            a, e, th = alpha(iteration), eta(iteration), theta(iteration)
            if reg.has_g:
                y_next = prox_conjugate_l1(y + a * reg.apply_D(z), a, lam)
                dual_push = reg.apply_Dt(y_next)
            else:
                y_next, dual_push = y, 0.
            block = partition.blocks[rng.integers(K)]
            grad = block_gradient(problem, block, x, scale)
            x_next = prox_scaled(reg.h, x - e * (dual_push + grad), e)
            z = x_next + th * (x_next - x)
            residual = float(np.linalg.norm(x_next - x) + np.linalg.norm(y_next - y))
            x, y = x_next, y_next
            iteration += 1
        v_prev2, v_prev = v_prev, x
        record(t * n_inner / K, iteration, v_prev, residual)
    return record.finish(v_prev, dual=y)


SOLVERS = {'pgd': pgd,
           'fista': fista,
           'minibatch_sgd': minibatch_sgd,
           'prox_svrg': prox_svrg,
           'pdhg': pdhg,
           'acc_pd_sgd': acc_pd_sgd}


def solve(problem, config, trace=None):
    '''
    Dispatches `config` to its solver, recording into `trace` when given.
    '''
    return SOLVERS[config.algorithm](problem, config, trace=trace)
