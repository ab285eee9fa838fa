"""Counter-based random streams: one independent generator per (seed, N, trial)."""
from __future__ import annotations

import numpy as np

_MASK32 = (1 << 32) - 1


def stream(seed: int, n: int, index: int) -> np.random.Generator:
    """Philox generator keyed by the master seed and the (N, trial) counter pair."""
    if not (0 <= n <= _MASK32 and 0 <= index <= _MASK32):
        raise ValueError("N and trial index must fit in 32 bits")
    return np.random.Generator(np.random.Philox(key=[int(seed) & ((1 << 64) - 1), (n << 32) | index]))
