"""Seeded random streams.

Integer and uniform draws come from numpy's PCG64 bit generator, whose
output is specified bit-for-bit and identical across platforms. Gaussian
draws use the Box-Muller transform on those uniforms instead of numpy's
ziggurat sampler, so the mapping from seed to normals is fixed by this file.
"""

from __future__ import annotations

import operator

import numpy as np


class Rng:
    """Reproducible random stream.

    Parameters
    ----------
    seed : int
        Unsigned 64-bit seed.
    """

    def __init__(self, seed: int):
        seed = operator.index(seed)  # rejects floats instead of truncating
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = seed
        self._gen = np.random.Generator(np.random.PCG64(seed))

    def uniform(self, size, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """Uniform draws on ``[low, high)``."""
        return low + (high - low) * self._gen.random(size)

    def normal(self, size, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        """Gaussian draws via Box-Muller (both outputs of each pair are used)."""
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape, dtype=np.int64))
        pairs = (n + 1) // 2
        u1 = 1.0 - self._gen.random(pairs)  # (0, 1], keeps log finite
        u2 = self._gen.random(pairs)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return mean + std * z[:n].reshape(shape)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def bernoulli(self, p: float, size) -> np.ndarray:
        """Boolean mask, True with probability ``p``."""
        return self._gen.random(size) < p

    def spawn_seed(self) -> int:
        """Draw a fresh 63-bit seed for a child stream."""
        return int(self._gen.integers(0, 2**63 - 1))

    def state(self) -> dict:
        return self._gen.bit_generator.state

    def set_state(self, state: dict) -> None:
        self._gen.bit_generator.state = state
