"""Seeded, splittable random streams.

Every stream is a numpy ``PCG64`` generator keyed by a ``SeedSequence`` with an
explicit ``spawn_key``. The pair (seed, key) fully determines the stream on
every platform, and streams with different keys are statistically independent.
"""

from __future__ import annotations

import zlib

import numpy as np

# Spawn keys reserved for the Bernoulli tape streams.
TAPE_P = 0
TAPE_Q = 1
TAPE_K = 2
POLICY = 3
AUX = 4


def generator(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=tuple(key))))


def derive_seed(seed: int, *key: int) -> int:
    """A child seed (non-negative, < 2**63) for ``(seed, key)``."""
    state = np.random.SeedSequence(int(seed), spawn_key=tuple(key)).generate_state(1, dtype=np.uint64)
    return int(state[0] >> np.uint64(1))


def label_key(label: str) -> int:
    """Stable integer key for a string label (used to key per-policy streams)."""
    return zlib.crc32(label.encode("utf-8"))
