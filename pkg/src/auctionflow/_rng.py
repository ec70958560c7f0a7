"""Deterministic seed-derived generator streams."""

from __future__ import annotations

import numpy as np


def substream(seed: int, *path: int) -> np.random.Generator:
    """Return an independent counter-based generator for (seed, *path).

    Stream identity depends only on the root seed and the index path, so the
    stream for opportunity k is reproducible no matter how many sibling
    streams exist or in which order they are consumed.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))
