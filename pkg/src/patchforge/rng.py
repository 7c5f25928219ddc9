"""Deterministic RNG streams keyed by (seed, purpose, entity).

Streams are derived with SHA-256 so the same key yields the same sequence
on every platform, in every process, and for any worker count. Python's
builtin hash() is salted per run and must never be used for keying.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _entropy(parts: tuple) -> list[int]:
    words: list[int] = []
    for part in parts:
        if isinstance(part, (int, np.integer)):
            words.append(int(part) & 0xFFFFFFFFFFFFFFFF)
        else:
            digest = hashlib.sha256(str(part).encode("utf-8")).digest()
            words.extend(int.from_bytes(digest[i:i + 8], "little") for i in range(0, 32, 8))
    return words


def seed_sequence(*parts) -> np.random.SeedSequence:
    """SeedSequence derived from ints and strings, stable across processes."""
    return np.random.SeedSequence(_entropy(parts))


def generator(*parts) -> np.random.Generator:
    """PCG64 generator keyed by the given parts."""
    return np.random.Generator(np.random.PCG64(seed_sequence(*parts)))
