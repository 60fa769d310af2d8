"""Named random streams derived from one 64-bit seed."""
from __future__ import annotations

import hashlib

import numpy as np


def _name_words(name: str) -> list[int]:
    digest = hashlib.blake2b(name.encode("utf-8"), digest_size=16).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]


def stream(seed: int, *names: str | int) -> np.random.Generator:
    """Return an independent generator for ``(seed, *names)``.

    The same seed and path of names always gives the same stream, and
    streams with different names do not overlap in practice.
    """
    seed = int(seed)
    if seed < 0 or seed >= 2 ** 64:
        raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
    entropy = [seed & 0xFFFFFFFF, seed >> 32]
    for name in names:
        entropy.extend(_name_words(str(name)))
    return np.random.default_rng(np.random.SeedSequence(entropy))


def child_seed(seed: int, *names: str | int) -> int:
    """A derived 64-bit seed, for APIs that take an integer."""
    return int(stream(seed, *names).integers(0, 2 ** 63))
