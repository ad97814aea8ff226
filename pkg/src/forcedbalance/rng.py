"""Counter-based random streams.

Every stochastic quantity in the package is drawn from a stream addressed by
``(seed, *keys)``. Streams are Philox generators keyed through
``SeedSequence(seed, spawn_key=keys)``, so stream ``k`` never depends on how
many other streams were consumed or on which worker consumed them.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["stream", "key_of"]


def key_of(tag: str | int) -> int:
    """Map a string tag to a stable 32-bit integer key."""
    if isinstance(tag, (int, np.integer)):
        if tag < 0:
            raise ValueError("stream keys must be nonnegative")
        return int(tag)
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def stream(seed: int, *keys: str | int) -> np.random.Generator:
    """Return the generator for stream ``keys`` under ``seed``."""
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(key_of(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))
