"""Seed derivation helpers for reproducible, resumable runs."""

from __future__ import annotations

import zlib

import numpy as np


def _key_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFF
    return zlib.crc32(str(key).encode("utf-8"))


def seed_sequence(*keys) -> np.random.SeedSequence:
    return np.random.SeedSequence([_key_int(k) for k in keys])


def rng_for(*keys) -> np.random.Generator:
    """Generator derived from a stable hash of the keys; identical keys give
    identical streams across runs and processes."""
    return np.random.default_rng(seed_sequence(*keys))


def int_seed(*keys) -> int:
    return int(seed_sequence(*keys).generate_state(1)[0])
