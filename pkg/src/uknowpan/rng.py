"""Counter-based random streams.

Every random draw in the package comes from a Philox generator whose key is
derived by hashing ``(seed, purpose, *indices)``. Nothing touches numpy's
global state, and a stream can be recreated from its coordinates alone, which
is what makes training resumable without serializing generator state.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_key(seed: int, purpose: str, *indices: int) -> int:
    h = hashlib.blake2b(digest_size=16)
    h.update(int(seed).to_bytes(8, "little", signed=False))
    h.update(purpose.encode("utf-8"))
    for i in indices:
        h.update(b"/")
        h.update(int(i).to_bytes(8, "little", signed=True))
    return int.from_bytes(h.digest(), "little")


def make_rng(seed: int, purpose: str = "", *indices: int) -> np.random.Generator:
    """Return an independent generator for the given coordinates."""
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
    return np.random.Generator(np.random.Philox(key=derive_key(seed, purpose, *indices)))


def sub_seed(seed: int, purpose: str, *indices: int) -> int:
    """A 63-bit integer seed for components that take a plain int."""
    return derive_key(seed, purpose, *indices) & ((1 << 63) - 1)
