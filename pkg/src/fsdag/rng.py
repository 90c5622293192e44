"""Seeded random streams.

Every random draw in the package comes from a PCG64 generator whose seed
sequence is keyed by the run seed plus a tuple of labels, so a given
(seed, purpose, document, region) always sees the same stream no matter how
many other streams were consumed before it.
"""

import hashlib

import numpy as np


def key_to_int(key: str | int) -> int:
    """Reduce a label to a non-negative 64-bit integer (BLAKE2b for strings)."""
    if isinstance(key, int):
        if key < 0:
            raise ValueError(f"stream keys must be non-negative, got {key}")
        return key
    digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stream(seed: int, *keys: str | int) -> np.random.Generator:
    """Independent generator for (seed, *keys)."""
    sequence = np.random.SeedSequence(entropy=key_to_int(seed), spawn_key=tuple(key_to_int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(sequence))
