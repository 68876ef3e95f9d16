"""Order-independent random streams.

Every stochastic object is addressed by a tuple of nonnegative integers
``(seed, stream, index, ...)``; the generator for that address is built from a
``SeedSequence`` over the tuple, so results never depend on how work is split
between workers or in what order tasks run.
"""
from __future__ import annotations

import numpy as np

# stream tags keep independent uses of one user seed apart
STREAM_PATHS = 1
STREAM_NOISE = 2
STREAM_ENDPOINTS = 3
STREAM_INIT = 4


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    if seed < 0 or any(k < 0 for k in keys):
        raise ValueError("seed and stream keys must be nonnegative")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, keys)])))


def standard_normals(seed: int, stream: int, index: int, shape) -> np.ndarray:
    return derive_rng(seed, stream, index).standard_normal(shape)
