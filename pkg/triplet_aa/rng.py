"""Seeded random streams.

Every random draw in the package comes from numpy's Philox-4x64-10
counter-based generator. A stream is identified by ``(seed, index)``: the
seed is the Philox key and the index occupies the third counter word, so
streams for different indices never overlap (each is 2**128 blocks long).
Because a stream depends on nothing but its identifier, Monte-Carlo trials
can run in any order or on any number of threads and still draw the same
numbers.
"""

import numpy as np

from triplet_aa.errors import ConfigurationError

_MAX_KEY = 2**128


def stream(seed: int, index: int = 0) -> np.random.Generator:
    """Return the generator for stream ``index`` under ``seed``."""
    if not 0 <= seed < _MAX_KEY:
        raise ConfigurationError(f"Seed must be in [0, 2**128), got {seed}.")
    if not 0 <= index < 2**64:
        raise ConfigurationError(f"Stream index must be in [0, 2**64), got {index}.")
    counter = np.array([0, 0, index, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(counter=counter, key=seed))
