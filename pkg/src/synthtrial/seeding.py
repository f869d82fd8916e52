"""Deterministic seed streams.

Every random draw in a study derives from ``(root_seed, key...)``: string
key parts are hashed with CRC-32, the resulting integers become the spawn
key of a :class:`numpy.random.SeedSequence`, and the sequence seeds a
counter-based Philox generator. Results therefore do not depend on the
order in which cells or replications are executed.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_int(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    if isinstance(part, float):
        return zlib.crc32(repr(part).encode())
    return zlib.crc32(str(part).encode())


def seed_sequence(root_seed: int, *key) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(root_seed), spawn_key=tuple(_key_int(k) for k in key))


def rng_for(root_seed: int, *key) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed_sequence(root_seed, *key)))


def child_seed(root_seed: int, *key) -> int:
    """A plain 32-bit integer seed for APIs that take ints."""
    return int(seed_sequence(root_seed, *key).generate_state(1)[0])


def as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
