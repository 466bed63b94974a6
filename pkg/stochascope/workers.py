'''
Process-level parallelism for independent jobs (curve points, solver runs).
'''

import logging
import multiprocessing
import os

from .constants import THREADS_ENV

logger = logging.getLogger(__name__)


def worker_count():
    '''
    Number of worker processes allowed by the STOCHASCOPE_THREADS environment
    variable. Unset means 1 (serial).
    '''
    raw = os.environ.get(THREADS_ENV, '').strip()
    if not raw:
        return 1
    try:
        count = int(raw)
    except ValueError:
        raise ValueError(f'{THREADS_ENV} must be a positive integer, got {raw!r}')
    if count < 1:
        raise ValueError(f'{THREADS_ENV} must be a positive integer, got {raw!r}')
    return min(count, multiprocessing.cpu_count())


def parallel_map(func, jobs, threads=1):
    '''
    Applies `func` to every job and returns the results in job order.

    Args:
        func: picklable module-level callable
        jobs: list of picklable arguments
        threads: worker processes; 1 runs serially in this process
    '''
    jobs = list(jobs)
    threads = max(1, min(int(threads), len(jobs)))
    if threads == 1:
        return [func(job) for job in jobs]
    logger.info(f'Running {len(jobs)} jobs on {threads} processes')
    with multiprocessing.Pool(processes=threads) as pool:
        return pool.map(func, jobs, chunksize=1)
