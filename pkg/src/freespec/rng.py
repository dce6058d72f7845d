"""Seeded counter-based random streams.

Every stream is a Philox generator keyed by a ``SeedSequence`` whose
entropy is the master seed and whose spawn key is the tuple of integer
indices (for example ``(grid_index, trial_index)``).  Streams with distinct
index tuples are statistically independent, and a stream depends on nothing
but its key, so results do not depend on execution order.
"""

import numpy as np

ALGORITHM = "numpy.Philox4x64-10/SeedSequence"


def make_rng(seed, *indices):
    """Return a ``numpy.random.Generator`` for ``(seed, *indices)``."""
    seed = int(seed)
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    key = tuple(int(i) for i in indices)
    ss = np.random.SeedSequence(entropy=seed, spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed, *indices):
    """A 63-bit integer seed derived from ``(seed, *indices)``.

    Useful when a child seed has to be recorded in an output file.
    """
    key = tuple(int(i) for i in indices)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
