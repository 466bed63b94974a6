'''
Exceptions raised by stochascope. Plain argument and invariant violations
raise `ValueError`; the classes below carry the extra context a caller needs
to diagnose a failed computation.
'''


class StochascopeError(Exception):
    '''
    Base class for every error raised on purpose by this package.
    '''


class ConvergenceError(StochascopeError):
    '''
    An iterative eigen solver stopped at its iteration cap.

    Attributes
    ----------
    last_iterate : numpy.ndarray
        unit vector held when the iteration stopped
    residual : float
        norm of AᵀA·v − θ·v for the last iterate v and Rayleigh quotient θ
    iterations : int
        number of iterations that were run
    '''

    def __init__(self, message, last_iterate, residual, iterations):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual
        self.iterations = iterations


class SpectrumError(StochascopeError):
    '''
    An eigenvalue estimate of a Gram matrix came out negative beyond the
    clamp tolerance.
    '''


class MatrixMarketError(StochascopeError, ValueError):
    '''
    A Matrix Market file could not be read.

    Attributes
    ----------
    path : str
        file being read
    line : int or None
        1-based line number of the offending line, when known
    '''

    def __init__(self, message, path, line=None):
        where = f'{path}:{line}' if line is not None else str(path)
        super().__init__(f'{where}: {message}')
        self.path = path
        self.line = line


class DivergenceError(StochascopeError):
    '''
    A solver objective blew past the divergence guard.
    '''

    def __init__(self, algorithm, iteration, objective):
        super().__init__(f'{algorithm} diverged at iteration {iteration}: '
                         f'objective {objective:.3e}')
        self.algorithm = algorithm
        self.iteration = iteration
        self.objective = objective


class ManifestError(StochascopeError):
    '''
    A problem bundle on disk is missing files or its digests do not match.
    '''


class ConfigError(StochascopeError, ValueError):
    '''
    A solver configuration is malformed or violates a step-size condition.
    '''
