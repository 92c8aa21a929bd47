"""Seed derivation and counter-based generators.

Every random stream in the package comes from a Philox generator whose key is
derived from a master seed and a tuple of integer indices.  Streams for
replication ``r`` or tree ``t`` therefore never depend on execution order.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

MASK64 = (1 << 64) - 1


def derive_seed(seed: int, *indices: int) -> int:
    """Hash ``(seed, *indices)`` into a 64-bit unsigned integer."""
    if seed < 0 or seed > MASK64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    h = hashlib.blake2b(digest_size=8, person=b"rankbias")
    h.update(struct.pack("<Q", seed))
    for idx in indices:
        if idx < 0 or idx > MASK64:
            raise ValueError(f"index must be a 64-bit unsigned integer, got {idx}")
        h.update(struct.pack("<Q", idx))
    return int.from_bytes(h.digest(), "little")


def generator(seed: int, *indices: int) -> np.random.Generator:
    """Philox generator keyed by ``derive_seed(seed, *indices)``."""
    return np.random.Generator(np.random.Philox(key=derive_seed(seed, *indices)))
