"""Seed handling.

All randomness flows from counter-based Philox streams keyed by
``SeedSequence(entropy, spawn_key)``; a child stream is addressed by
appending integer keys, so results never depend on execution order.
"""
from __future__ import annotations

import zlib

import numpy as np

SeedLike = int | np.random.SeedSequence


def derive_seed(seed: SeedLike, *keys: int) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + keys)
    return np.random.SeedSequence(int(seed), spawn_key=keys)


def make_rng(seed: SeedLike, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(derive_seed(seed, *keys)))


def token_key(token: str) -> int:
    """Stable integer key for a method token."""
    return zlib.crc32(token.encode("utf-8"))
