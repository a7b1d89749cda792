"""Single source of randomness.

Every random draw in the toolkit goes through a numpy ``Generator`` backed by
PCG64 (permuted congruential generator, 128-bit state) seeded from an explicit
64-bit unsigned integer, so runs are reproducible from their seeds.
"""

import numpy as np

MAX_SEED = 2**64 - 1


def make_rng(seed: int) -> np.random.Generator:
    if not 0 <= int(seed) <= MAX_SEED:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.Generator(np.random.PCG64(int(seed)))
