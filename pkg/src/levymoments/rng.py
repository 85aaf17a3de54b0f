"""Counter-based random streams.

Every stream is addressed by (seed, key...) and realized with Philox, so the
numbers a block of paths sees never depend on which thread produced them or
in which order blocks were scheduled.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _key_int(k) -> int:
    if isinstance(k, (int, np.integer)):
        if k < 0:
            raise ValueError("stream keys must be non-negative")
        return int(k)
    digest = hashlib.sha256(str(k).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def stream(seed: int, *key) -> np.random.Generator:
    """Independent generator for the address (seed, *key)."""
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=tuple(_key_int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))
