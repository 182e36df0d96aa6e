"""Seeded random streams.

Every stochastic component draws from an :class:`RngStream`. Streams are
derived from a 64-bit seed plus an optional tuple of integer keys, so a
component's draws depend only on ``(seed, keys)`` and never on how many
numbers some other component consumed.
"""
from __future__ import annotations

import numpy as np


class RngStream:
    """PCG64 stream with a draw counter.

    ``counter`` counts calls, not numbers, and exists for logging only.
    """

    def __init__(self, seed: int, keys: tuple[int, ...] = ()):
        if seed < 0 or seed >= 2**64:
            raise ValueError(f"seed must fit in 64 bits, got {seed}")
        self.seed = int(seed)
        self.keys = tuple(int(k) for k in keys)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.keys)
        self._gen = np.random.Generator(np.random.PCG64(ss))
        self.counter = 0

    def child(self, *keys: int) -> "RngStream":
        return RngStream(self.seed, self.keys + tuple(keys))

    @property
    def generator(self) -> np.random.Generator:
        self.counter += 1
        return self._gen

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self.generator.choice(n, size=size, replace=replace)

    def beta(self, a, b):
        return self.generator.beta(a, b)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, keys={self.keys}, counter={self.counter})"
