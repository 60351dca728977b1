"""Seed derivation. Worker count never enters a seed."""

import numpy as np
import torch


def job_seed(base_seed, job_index):
    """Seed of an independent job: base seed XOR job index."""
    return int(base_seed) ^ int(job_index)


def stream_seed(seed, *keys):
    """Independent 63-bit sub-stream seed keyed by integers (attempt, N, ...)."""
    sequence = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(sequence.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def numpy_rng(seed, *keys):
    return np.random.default_rng(stream_seed(seed, *keys) if keys else int(seed))


def torch_generator(seed, *keys):
    generator = torch.Generator()
    generator.manual_seed(stream_seed(seed, *keys) if keys else int(seed))
    return generator
