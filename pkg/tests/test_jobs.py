import numpy as np
import torch

from dnpu_forge.utils.jobs import run_jobs
from dnpu_forge.utils.seeding import job_seed, numpy_rng, stream_seed, torch_generator


def test_job_seed_is_xor():
    assert job_seed(0, 5) == 5
    assert job_seed(12, 5) == 9
    assert job_seed(7, 0) == 7


def test_stream_seeds_differ_by_key():
    seeds = {stream_seed(0, n, attempt) for n in range(4, 7) for attempt in range(15)}
    assert len(seeds) == 45
    assert stream_seed(0, 4, 1) == stream_seed(0, 4, 1)
    assert stream_seed(0, 4, 1) != stream_seed(1, 4, 1)
    assert 0 <= stream_seed(3, 1) < 2 ** 63


def test_generators_are_reproducible():
    assert np.array_equal(numpy_rng(2, 1).random(3), numpy_rng(2, 1).random(3))
    assert torch.equal(torch.rand(3, generator=torch_generator(2, 1)), torch.rand(3, generator=torch_generator(2, 1)))


def test_run_jobs_keeps_job_order():
    assert run_jobs(pow, [(2, 3), (3, 2), (10, 0)]) == [8, 9, 1]


def test_run_jobs_restores_thread_count():
    threads = torch.get_num_threads()
    run_jobs(abs, [(-1,), (2,)])
    assert torch.get_num_threads() == threads


def test_parallel_results_match_serial():
    jobs = [(i, 7) for i in range(6)]
    assert run_jobs(divmod, jobs, workers=2) == run_jobs(divmod, jobs, workers=1)
