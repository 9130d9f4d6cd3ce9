"""Deterministic RNG streams derived from one root seed."""

from __future__ import annotations

import numpy as np


def spawn_rng(seed: int, *path: int) -> np.random.Generator:
    """Generator for the named stream ``path`` under ``seed``.

    Streams with different paths are statistically independent; the same
    (seed, path) always yields the same generator state.
    """
    entropy = int(seed) % (1 << 63)
    return np.random.default_rng(
        np.random.SeedSequence(entropy=entropy, spawn_key=tuple(int(p) for p in path))
    )
