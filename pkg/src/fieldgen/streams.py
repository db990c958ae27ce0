"""Counter-based random streams.

Stream i under a master seed is a pure function of (seed, i): the pair is
the Philox key, so replicate streams are reproducible and independent of
evaluation order or thread count.
"""

import numpy as np

_MASK64 = (1 << 64) - 1


def rng_stream(seed: int, stream_index: int = 0) -> np.random.Generator:
    """Standard-normal-capable generator for one replicate stream."""
    if seed < 0 or stream_index < 0:
        raise ValueError("rng_stream: seed and stream index must be nonnegative")
    key = np.array([seed & _MASK64, stream_index & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
