"""Deterministic per-component random streams derived from one master seed.

Each component draws from its own stream, so changing how many numbers one
component consumes never shifts another component's draws.
"""

import numpy as np

INIT = 1
SAMPLER = 2
NOISE = 3
DATAGEN = 4
SPLIT = 5
PAIRS = 6


def stream(seed: int, offset: int, *extra: int) -> np.random.Generator:
    """Return the generator for ``(seed, offset, *extra)``."""
    seq = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=(offset, *extra))
    return np.random.Generator(np.random.PCG64(seq))
