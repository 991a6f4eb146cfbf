"""Seeded, splittable random streams.

Every stochastic routine derives its generator from a key path such as
``(seed, run_index)`` fed to a SeedSequence driving a counter-based Philox
bit generator, so runs are reproducible and independent of execution order.
"""

from __future__ import annotations

from typing import Sequence, Union

import numpy as np

SeedLike = Union[int, Sequence[int]]


def key_path(seed: SeedLike, *keys: int) -> tuple[int, ...]:
    base = (seed,) if isinstance(seed, (int, np.integer)) else tuple(seed)
    path = tuple(int(k) for k in (*base, *keys))
    if any(k < 0 for k in path):
        raise ValueError(f"seeds must be non-negative integers, got {path}")
    return path


def substream(seed: SeedLike, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key_path(seed, *keys))))
