"""Seeded random streams.

A single integer seed pins the whole pipeline: every module draws from an
:class:`Rng` created here, and sub-streams (per run, per sampling chain) are
derived with :meth:`Rng.child` so results never depend on execution order.
"""

from __future__ import annotations

import numpy as np


class Rng:
    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed)))

    def child(self, *keys: int) -> "Rng":
        """Derive an independent stream from (seed, keys); deterministic."""
        rng = Rng.__new__(Rng)
        rng.seed = self.seed
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=tuple(int(k) for k in keys))
        rng._gen = np.random.Generator(np.random.PCG64(seq))
        return rng

    def uniform(self, shape=None, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def normal(self, shape=None) -> np.ndarray:
        return self._gen.standard_normal(size=shape)

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def glorot_uniform(rng: Rng, shape: tuple, fan_in: int | None = None, fan_out: int | None = None) -> np.ndarray:
    if fan_in is None:
        fan_in = shape[0] if len(shape) > 1 else shape[0]
    if fan_out is None:
        fan_out = shape[-1] if len(shape) > 1 else 1
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(shape, -limit, limit)
