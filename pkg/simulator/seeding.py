"""Derived random streams.

Every stochastic draw in the simulator comes from a generator keyed by the
master seed plus a tuple of non-negative integers, so results never depend on
the order in which clients or SNR points are processed.
"""

import numpy as np

STREAM_INIT = 0
STREAM_PARTITION = 1
STREAM_BATCH = 2
STREAM_CHANNEL = 3
STREAM_ECRT = 4
STREAM_BER = 6
STREAM_BOUNDS = 7
STREAM_DATA = 8


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    entropy = [int(seed)] + [int(key) for key in keys]
    if any(value < 0 for value in entropy):
        raise ValueError("Seed and stream keys must be non-negative.")
    return np.random.default_rng(np.random.SeedSequence(entropy))
