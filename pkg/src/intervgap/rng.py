"""Counter-based random streams.

Every random quantity is addressed by a tuple of integers (bootstrap
replicate, stream label, repetition, ...) that is mixed into a numpy
``SeedSequence``.  The same address always yields the same numbers, no
matter which process asks or in which order.
"""

from __future__ import annotations

import hashlib

import numpy as np


def label_key(label: str) -> int:
    """Stable 32-bit integer for a text label (``hash`` is salted per process)."""
    return int.from_bytes(hashlib.sha256(label.encode()).digest()[:4], "little")


def generator(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def uniform_block(seed: int, key: tuple[int, ...], reps: range, width: int, n: int) -> np.ndarray:
    """Uniforms of shape (len(reps), width, n).

    Repetition ``z`` always draws from its own generator keyed by
    ``key + (z,)``, so splitting the repetitions into chunks does not change
    any value.
    """
    out = np.empty((len(reps), width, n))
    for i, z in enumerate(reps):
        out[i] = generator(seed, *key, z).random((width, n))
    return out
