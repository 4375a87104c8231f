"""Seeded random streams.

Every random draw in the package comes from a ``numpy.random.Generator``
backed by PCG64 and keyed by a ``SeedSequence``.  A stream is identified by
the 64-bit run seed plus a tuple of integer keys (the spawn key), so two
streams with different keys are statistically independent and each stream
is reproducible on its own:

    stream(seed, CP_BLOCK_CC)    core-core pairs of the CP generator
    stream(seed, CP_BLOCK_CP)    core-periphery pairs
    stream(seed, CP_BLOCK_PP)    periphery-periphery pairs
    stream(seed, ER_PAIRS)       Erdos-Renyi pairs
    stream(seed, WS_REWIRE)      Watts-Strogatz rewiring
    stream(seed, LABELS)         node label permutation
"""

import numpy as np

from .errors import ParameterError

SEED_MAX = 2**64 - 1

CP_BLOCK_CC = 0
CP_BLOCK_CP = 1
CP_BLOCK_PP = 2
ER_PAIRS = 3
WS_REWIRE = 4
LABELS = 5


def check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed <= SEED_MAX:
        raise ParameterError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def stream(seed: int, *keys: int) -> np.random.Generator:
    seq = np.random.SeedSequence(check_seed(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(seq))


def child_seed(seed: int, *keys: int) -> int:
    """Derive a new 64-bit seed from ``seed`` and ``keys``."""
    seq = np.random.SeedSequence(check_seed(seed), spawn_key=tuple(int(k) for k in keys))
    return int(seq.generate_state(1, dtype=np.uint64)[0])
