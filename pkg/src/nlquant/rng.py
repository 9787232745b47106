"""Seeded random streams.

Every random draw in the package comes from a Philox-4x64 counter-based
generator. The 128-bit Philox key is ``seed | (stream << 64)``, so a
``(seed, stream)`` pair names an independent, reproducible stream and
the n-th draw of a stream depends only on its counter position. Ports to
other languages reproduce streams by using Philox-4x64-10 with the same
key layout and a zero initial counter.
"""

import numpy as np

SEED_BITS = 64


def check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed < 1 << SEED_BITS:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def stream(seed: int, index: int = 0) -> np.random.Generator:
    """Return the generator for stream ``index`` of ``seed``."""
    seed = check_seed(seed)
    index = int(index)
    if not 0 <= index < 1 << SEED_BITS:
        raise ValueError(f"stream index out of range: {index}")
    return np.random.Generator(np.random.Philox(key=seed | (index << SEED_BITS)))
