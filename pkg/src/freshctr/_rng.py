"""Keyed random streams.

Every random draw in the package comes from a PCG64 bit generator seeded
through numpy's SeedSequence with an integer key path ``(seed, *keys)``.
Keying by purpose (and by hour, item or row where relevant) means a draw
never depends on how many other draws happened before it, which is what
makes slices of a stream and new embedding rows reproducible on their own.
"""

from __future__ import annotations

import numpy as np

# stream tags, part of the key path
INIT_EMBEDDING = 1
INIT_DENSE = 2
SHUFFLE = 3
WORLD_ITEM = 10
WORLD_WALK = 11
WORLD_ARRIVALS = 12
WORLD_IMPRESSIONS = 13
WORLD_SHIFT = 14
WORLD_STATIC = 15
DERIVED_SEED = 20


def keyed_rng(seed: int, *keys: int) -> np.random.Generator:
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(k) & 0xFFFFFFFFFFFFFFFF for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def derive_seed(seed: int, *keys: int) -> int:
    """Stable 63-bit child seed for ``(seed, *keys)``."""
    state = np.random.SeedSequence(
        [int(seed) & 0xFFFFFFFFFFFFFFFF, DERIVED_SEED] + [int(k) & 0xFFFFFFFFFFFFFFFF for k in keys]
    ).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1])) & 0x7FFFFFFFFFFFFFFF
