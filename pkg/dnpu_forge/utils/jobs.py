import logging
from concurrent.futures import ProcessPoolExecutor

import torch

logger = logging.getLogger(__name__)


def _single_threaded(job):
    function, args = job
    torch.set_num_threads(1)
    return function(*args)


def run_jobs(function, job_args, workers=1):
    """
    Run function(*args) for every entry of job_args and return results in job order.

    Each job runs with one torch thread, so results do not depend on workers.
    With workers > 1 the jobs fan out over a process pool; function and its
    arguments must then be picklable.
    """
    jobs = [(function, tuple(args)) for args in job_args]
    if workers <= 1 or len(jobs) <= 1:
        threads = torch.get_num_threads()
        try:
            return [_single_threaded(job) for job in jobs]
        finally:
            torch.set_num_threads(threads)
    logger.info(f"Running {len(jobs)} jobs on {workers} workers")
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_single_threaded, jobs))
