"""Replication-indexed random streams.

Stream ``i`` of master seed ``s`` is the ``i``-th child of
``SeedSequence(s)``, so it depends on nothing but ``(s, i)``.
"""

import numpy as np


def stream_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))


def stream(master_seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(stream_seed(master_seed, index))


def split(seed, k: int):
    """``k`` independent generators derived from ``seed`` (int or SeedSequence)."""
    if isinstance(seed, np.random.SeedSequence):
        # fresh copy: spawn() mutates its parent's child counter
        ss = np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key)
    else:
        ss = np.random.SeedSequence(seed)
    return [np.random.default_rng(c) for c in ss.spawn(k)]
