'''
Solver configurations and per-epoch convergence traces.
'''

import json
import math
from dataclasses import dataclass, field, asdict, fields

import numpy as np

from .constants import ALGORITHMS, PARTITION_SCHEMES, SAMPLINGS, STEP_POLICIES
from .constants import SOLVER_DEFAULTS, TRACE_COLUMNS
from .errors import ConfigError


@dataclass(frozen=True)
class SolverConfig():
    '''
    One solver run.

    Attributes
    ----------
    name : str
        run label, also the trace file stem
    algorithm : str
        one of ALGORITHMS
    epochs : int
        iterations for pgd, fista and pdhg; datapasses for minibatch_sgd;
        outer loops for prox_svrg and (unless n_outer is set) acc_pd_sgd
    seed : int
        seed of the run's random stream
    step : float or None
        primal step η (τ for pdhg); derived from the problem when None
    step_policy : str
        'default' or 'scaled', selects the derived primal-dual steps
    K, scheme, partition_seed : int, str, int
        minibatch partition for the stochastic solvers
    sampling : str
        'partition' or 'with_replacement' (minibatch_sgd only)
    m : int or None
        minibatch size for with-replacement sampling
    n_outer, n_inner : int or None
        outer loops N₀ and inner steps N₁ of acc_pd_sgd
    alpha, eta, theta : float, list or None
        dual step, primal step and extrapolation of the primal-dual solvers;
        a list gives one value per acc_pd_sgd inner step, counted across outer
        loops (the last one repeats); pdhg takes the first value
    tv_inner_iters : int
        iteration budget of the TV prox inside fista
    x0 : str
        'backprojection' or 'zeros'
    record_every : int or None
        iterations between trace records, overriding the per-epoch default
    outer_momentum : bool
        Katyusha-X extrapolation between acc_pd_sgd outer loops; when False
        every outer loop restarts from the previous inner iterate
    '''
    name: str
    algorithm: str
    epochs: int = SOLVER_DEFAULTS['epochs']
    seed: int = SOLVER_DEFAULTS['seed']
    step: float = None
    step_policy: str = SOLVER_DEFAULTS['step_policy']
    K: int = SOLVER_DEFAULTS['K']
    scheme: str = SOLVER_DEFAULTS['scheme']
    partition_seed: int = None
    sampling: str = SOLVER_DEFAULTS['sampling']
    m: int = None
    n_outer: int = None
    n_inner: int = None
    alpha: object = None
    eta: object = None
    theta: object = None
    tv_inner_iters: int = SOLVER_DEFAULTS['tv_inner_iters']
    x0: str = SOLVER_DEFAULTS['x0']
    record_every: int = None
    outer_momentum: bool = SOLVER_DEFAULTS['outer_momentum']

    def __post_init__(self):
        if not self.name:
            raise ConfigError('Solver config needs a name')
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f'Unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}')
        if self.epochs < 1:
            raise ConfigError(f'epochs must be at least 1, got {self.epochs}')
        if self.step is not None and not self.step > 0:
            raise ConfigError(f'step must be positive, got {self.step}')
        if self.step_policy not in STEP_POLICIES:
            raise ConfigError(f'Unknown step policy {self.step_policy!r}')
        if self.K < 1:
            raise ConfigError(f'K must be at least 1, got {self.K}')
        if self.scheme not in PARTITION_SCHEMES or self.scheme == 'custom':
            raise ConfigError(f'Unsupported partition scheme {self.scheme!r}')
        if self.sampling not in SAMPLINGS:
            raise ConfigError(f'Unknown sampling {self.sampling!r}; expected one of {SAMPLINGS}')
        if self.sampling == 'with_replacement' and (self.m is None or self.m < 1):
            raise ConfigError('With-replacement sampling needs a minibatch size m ≥ 1')
        for key in ('n_outer', 'n_inner', 'record_every'):
            value = getattr(self, key)
            if value is not None and value < 1:
                raise ConfigError(f'{key} must be at least 1, got {value}')
        for key in ('alpha', 'eta'):
            value = getattr(self, key)
            if value is not None and not all(v > 0 for v in np.atleast_1d(value)):
                raise ConfigError(f'{key} must be positive, got {value}')
        if self.theta is not None and not all(0 <= v <= 1 for v in np.atleast_1d(self.theta)):
            raise ConfigError(f'theta must lie in [0, 1], got {self.theta}')
        if self.tv_inner_iters < 1:
            raise ConfigError(f'tv_inner_iters must be at least 1, got {self.tv_inner_iters}')
        if self.x0 not in ('backprojection', 'zeros'):
            raise ConfigError(f'Unknown x0 rule {self.x0!r}')
        if not isinstance(self.outer_momentum, bool):
            raise ConfigError(f'outer_momentum must be true or false, got {self.outer_momentum!r}')
        for key in ('alpha', 'eta', 'theta'):
            value = getattr(self, key)
            if isinstance(value, list):
                object.__setattr__(self, key, tuple(value))

    @property
    def rng_seed(self):
        return np.random.SeedSequence(self.seed)

    @classmethod
    def from_dict(cls, record):
        '''
        Builds a config from a JSON object; unknown keys are an error.
        '''
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(record) - known)
        if unknown:
            raise ConfigError(f'Unknown solver config keys {unknown}')
        if 'name' not in record or 'algorithm' not in record:
            raise ConfigError('Solver config needs "name" and "algorithm"')
        settings = SOLVER_DEFAULTS.copy()
        settings.update(record)
        return cls(**settings)

    def to_dict(self):
        record = asdict(self)
        for key in ('alpha', 'eta', 'theta'):
            if isinstance(record[key], tuple):
                record[key] = list(record[key])
        return record


def load_configs(path):
    '''
    Reads a JSON list of solver configs. Names must be unique.
    '''
    with open(path, 'r', encoding='utf-8') as f:
        try:
            records = json.load(f)
        except json.JSONDecodeError as err:
            raise ConfigError(f'{path}: invalid JSON ({err})')
    if isinstance(records, dict):
        records = [records]
    if not isinstance(records, list) or not records:
        raise ConfigError(f'{path}: expected a nonempty list of solver configs')
    configs = [SolverConfig.from_dict(record) for record in records]
    names = [config.name for config in configs]
    if len(set(names)) != len(names):
        raise ConfigError(f'{path}: solver config names must be unique')
    return configs


@dataclass(frozen=True)
class TraceRecord():
    epoch: float
    iteration: int
    objective: float
    est_error: float
    wall_ms: float
    residual: float = float('nan')


@dataclass(eq=False)
class Trace():
    '''
    Convergence log of one solver run.

    Attributes
    ----------
    config : SolverConfig
        the run's configuration
    records : list of TraceRecord
        strictly increasing epochs, nondecreasing wall times
    error : str or None
        failure message when the run aborted
    dual : numpy.ndarray or None
        final dual iterate of the primal-dual solvers
    '''
    config: SolverConfig
    records: list = field(default_factory=list)
    error: str = None
    dual: np.ndarray = None

    def append(self, record):
        if self.records:
            last = self.records[-1]
            if not record.epoch > last.epoch:
                raise ValueError(f'Trace epochs must increase, got {record.epoch} after {last.epoch}')
            if record.wall_ms < last.wall_ms:
                raise ValueError('Trace wall times must not decrease')
        self.records.append(record)

    @property
    def completed(self):
        return self.error is None

    @property
    def epochs(self):
        return np.array([r.epoch for r in self.records])

    @property
    def objectives(self):
        return np.array([r.objective for r in self.records])

    @property
    def est_errors(self):
        return np.array([r.est_error for r in self.records])

    @property
    def residuals(self):
        return np.array([r.residual for r in self.records])

    def rows(self):
        '''
        Records as rows in TRACE_COLUMNS order.
        '''
        return [[getattr(r, column) for column in TRACE_COLUMNS] for r in self.records]

    def to_dict(self):
        def clean(value):
            return value if math.isfinite(value) else None
        return {'config': self.config.to_dict(),
                'completed': self.completed,
                'error': self.error,
                'records': [{column: clean(getattr(r, column)) for column in TRACE_COLUMNS}
                            for r in self.records]}
