"""Seeded random streams.

All stochastic code in the package draws from an RngStream so that a run is
fully determined by (seed, call order). Streams for independent work units
(e.g. one simulated session) are derived from a root seed plus integer keys,
which keeps them reproducible regardless of scheduling order.
"""

from __future__ import annotations

import numpy as np


class RngStream:
    """A numpy Generator plus bookkeeping for derivation.

    :param seed: root seed, any non-negative int.
    :param key: extra integer entropy mixed in via SeedSequence.
    """

    def __init__(self, seed: int, key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([self.seed, *self.key]))
        )

    @classmethod
    def derive(cls, seed: int, *key: int) -> "RngStream":
        """Stream for a work unit identified by integer keys."""
        return cls(seed, key)

    def standard_normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, low=0.0, high=1.0, shape=None) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n) -> np.ndarray:
        return self._gen.permutation(n)

    def shuffle(self, a) -> None:
        self._gen.shuffle(a)

    def choice(self, a, size=None, replace=True, p=None):
        return self._gen.choice(a, size=size, replace=replace, p=p)

    def random(self, shape=None) -> np.ndarray:
        return self._gen.random(shape)
