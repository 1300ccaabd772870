"""Deterministic RNG derivation: every random draw in the package comes
from a generator keyed by (seed, namespace, indices...)."""

from __future__ import annotations

import numpy as np

NS_INIT = 0
NS_SHUFFLE = 1
NS_MASK = 2
NS_AUG = 3
NS_SAMPLE = 4
NS_NOISE = 5


def rng_for(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))
