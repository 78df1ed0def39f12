"""Seed handling shared by every stochastic routine."""

from __future__ import annotations

import numpy as np


def as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.default_rng(seed)


def derive(master_seed: int, *keys: int) -> np.random.SeedSequence:
    """Independent stream for a keyed unit of work, e.g. (split, classifier)."""
    return np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in keys))
