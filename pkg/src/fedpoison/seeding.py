"""Deterministic derivation of independent random substreams.

Every stochastic component of the simulator (client sampling, trigger
placement, shuffles, ...) draws from its own substream keyed by the
master seed plus integer keys, so changing one component never shifts
the randomness of another.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def subseed(seed: int, *keys: int) -> int:
    """Derive a 64-bit seed from a master seed and a tuple of integer keys."""
    entropy = [int(seed) & _MASK64] + [int(k) & _MASK64 for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0])


def rng_from(seed: int, *keys: int) -> np.random.Generator:
    """Generator seeded by ``subseed(seed, *keys)``."""
    return np.random.default_rng(subseed(seed, *keys))
