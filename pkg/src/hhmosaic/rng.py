"""Seeded, splittable random streams (Philox counter-based generator)."""
from __future__ import annotations

import numpy as np


def stream(seed: int, *path: int) -> np.random.Generator:
    """Independent generator for ``seed`` and a sub-stream ``path``.

    Different paths under the same seed never overlap, so record ``i`` of a
    dataset can be regenerated alone via ``stream(seed, i)``.
    """
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))
