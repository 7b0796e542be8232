"""Counter-based seeding.

Every random draw is addressed by ``(seed, level)`` or ``(seed, replicate)``
through Philox keyed by a :class:`numpy.random.SeedSequence`, so a stream never
depends on what was drawn elsewhere or on how work is scheduled.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1

_TREE_LEVEL = 0x7472
_REPLICATE = 0x7265


def _key(*words: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(w) & MASK64 for w in words])


def level_generator(seed: int, level: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(_key(_TREE_LEVEL, seed, level)))


def replicate_seed(seed: int, replicate: int, stream: int = 0) -> int:
    """A 64-bit seed for one Monte-Carlo replicate."""
    ss = _key(_REPLICATE, seed, stream, replicate)
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def generator(seed: int, *words: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(_key(seed, *words)))
