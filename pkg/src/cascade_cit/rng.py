"""Deterministic random number generation.

All randomness in the package flows through :class:`Rng`, a thin wrapper
around numpy's counter-based Philox4x32-10 bit generator.  Philox is a
fixed, published algorithm (Salmon et al., "Parallel random numbers: as
easy as 1, 2, 3"), so a given 64-bit seed produces the same stream on
every platform.  Derived streams use ``seed XOR stream_id``, which keeps
per-request generation independent of worker count or iteration order.
"""

from __future__ import annotations

import numpy as np


class Rng:
    """Seeded random source. One instance per worker; never share across threads."""

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    def derive(self, stream_id: int) -> "Rng":
        """Independent child stream keyed by ``seed XOR stream_id``."""
        return Rng(self.seed ^ (int(stream_id) & 0xFFFFFFFFFFFFFFFF))

    def normal(self, shape, std: float = 1.0) -> np.ndarray:
        return self._gen.normal(0.0, std, size=shape)

    def uniform(self, shape=None) -> np.ndarray:
        return self._gen.uniform(0.0, 1.0, size=shape)

    def integers(self, low: int, high: int, size=None):
        """Uniform integers in [low, high)."""
        return self._gen.integers(low, high, size=size)

    def choice_without_replacement(self, n: int, k: int) -> np.ndarray:
        """k distinct indices drawn uniformly from range(n)."""
        return self._gen.choice(n, size=k, replace=False)

    def choice_with_replacement(self, n: int, k: int) -> np.ndarray:
        return self._gen.integers(0, n, size=k)

    def raw(self, n: int) -> np.ndarray:
        """Raw 64-bit Philox outputs; pinned by the algorithm itself."""
        return self._gen.bit_generator.random_raw(n)
