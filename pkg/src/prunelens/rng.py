"""Counter-based random streams.

Every random draw in the toolkit comes from a Philox generator keyed by a
hash of (seed, *labels). Streams are therefore independent of call order
and thread scheduling: the same (seed, labels) tuple always yields the
same values, and distinct label tuples yield statistically independent
streams.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_key(seed: int, *labels) -> int:
    """128-bit Philox key derived by hashing the seed and label path."""
    h = hashlib.blake2b(digest_size=16)
    h.update(int(seed).to_bytes(8, "little", signed=False))
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


def stream(seed: int, *labels) -> np.random.Generator:
    """Independent generator for the given (seed, label...) path."""
    return np.random.Generator(np.random.Philox(key=derive_key(seed, *labels)))


def derive_seed(seed: int, *labels) -> int:
    """64-bit subsystem seed derived from a top-level seed by labeled hashing."""
    return derive_key(seed, *labels) & 0xFFFFFFFFFFFFFFFF
