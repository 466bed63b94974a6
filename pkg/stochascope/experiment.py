'''
Comparison harness: runs a list of solver configurations on one problem.
'''

import logging
import time

from .solvers import solve
from .traces import Trace
from .workers import parallel_map

logger = logging.getLogger(__name__)


def _run_one(job):
    problem, config = job
    start = time.time()
    trace = Trace(config)
    try:
        solve(problem, config, trace=trace)
    except Exception as err:
        logger.warning(f'{config.name} ({config.algorithm}) failed after '
                       f'{len(trace.records)} records: {type(err).__name__}: {err}')
        trace.error = f'{type(err).__name__}: {err}'
        return trace
    logger.info(f'{config.name} done in {round(time.time() - start, 2)}s')
    return trace


def run_experiment(problem, configs, threads=1):
    '''
    Runs every config on `problem`. Each run draws from its own random stream,
    seeded by the config alone, so results do not depend on the order or the
    number of processes. Any exception raised by a run is recorded as the
    trace `error`, next to the records written before the failure, and does
    not stop the others. Solvers never modify the problem, so all runs share
    it.

    Args:
        problem: Problem, shared read-only
        configs: list of SolverConfig
        threads: worker processes
    Returns:
        list of Trace in config order
    '''
    configs = list(configs)
    if not configs:
        raise ValueError('run_experiment needs at least one config')
    traces = parallel_map(_run_one, [(problem, config) for config in configs], threads=threads)
    failed = [t.config.name for t in traces if not t.completed]
    if failed:
        logger.warning(f'{len(failed)} of {len(traces)} configs failed: {", ".join(failed)}')
    return traces
