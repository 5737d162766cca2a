"""Seeded random source shared by initialisation, dropout and shuffling."""

from __future__ import annotations

import numpy as np


class Rng:
    """Thin wrapper over a PCG64 generator; same seed gives the same draws bitwise."""

    def __init__(self, seed: int = 42):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def normal(self, shape, scale: float = 1.0) -> np.ndarray:
        return self._gen.normal(0.0, scale, size=shape)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def random(self) -> float:
        return float(self._gen.random())

    def choice(self, n: int, p=None) -> int:
        return int(self._gen.choice(n, p=p))

    def spawn(self, offset: int) -> "Rng":
        """Independent stream derived from this seed (not from the current state)."""
        return Rng(self.seed * 1_000_003 + offset)

    def get_state(self) -> dict:
        return self._gen.bit_generator.state

    def set_state(self, state: dict) -> None:
        self._gen.bit_generator.state = state
