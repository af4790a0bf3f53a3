"""Seeding helpers.

All randomness in the package flows through PCG64 generators built here, so a
run is reproducible from its base seed alone. Per-item seeds are derived as
``base XOR splitmix64(index)``; parallel workers that derive the same way
reproduce the serial result.
"""
from __future__ import annotations

from typing import Union

import numpy as np

MASK64 = (1 << 64) - 1

SeedLike = Union[int, np.random.Generator]


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def derive_seed(base: int, index: int) -> int:
    """Seed for item ``index`` of a stream seeded with ``base``."""
    return (int(base) ^ splitmix64(int(index) & MASK64)) & MASK64


def stream_seed(base: int, *keys: int) -> int:
    """Seed for a nested key path, e.g. ``stream_seed(seed, STREAM_MASK, step, i)``.

    Each level is mixed after the XOR so that ``(1, 2)`` and ``(2, 1)`` do not
    collide.
    """
    s = int(base) & MASK64
    for k in keys:
        s = splitmix64(derive_seed(s, k))
    return s


def make_rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, (bool, float)) or not isinstance(seed, (int, np.integer)):
        raise TypeError(f"seed must be an int or numpy Generator, got {type(seed).__name__}")
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return np.random.Generator(np.random.PCG64(int(seed) & MASK64))
