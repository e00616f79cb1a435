"""Counter-based random substreams.

One master 64-bit seed is split into independent substreams by keying a
Philox counter-based generator with (seed, stream index). Streams are
order-independent, so draws for cluster i are identical no matter how many
clusters are generated, in what order, or on which thread.
"""

from __future__ import annotations

import numpy as np

__all__ = ["substream"]


def substream(seed: int, stream: int) -> np.random.Generator:
    """Generator for substream `stream` of master `seed`; bit-reproducible."""
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    key = np.array([seed, int(stream)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
