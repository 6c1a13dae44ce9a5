"""Counter-based random stream with platform-stable draws.

Philox supplies the integer stream; uniforms come from the fixed 53-bit
conversion and normals from Box-Muller rather than library ziggurats, so a
seed pins the exact sample values.
"""

from __future__ import annotations

import numpy as np
from numpy.random import Philox

__all__ = ["RandomStream"]

_INV_2_53 = 2.0 ** -53


class RandomStream:
    """Seeded Philox-backed stream of uniforms, normals, and sign flips."""

    def __init__(self, seed: int = 0, branch: int = 0):
        self.seed = int(seed)
        self.branch_index = int(branch)
        # 128-bit key from (seed, branch): independent streams per branch
        key = (np.uint64(self.seed & 0xFFFFFFFFFFFFFFFF), np.uint64(self.branch_index & 0xFFFFFFFFFFFFFFFF))
        self._bg = Philox(key=np.array(key, dtype=np.uint64))

    def branch(self, index: int) -> "RandomStream":
        """Independent stream derived from the same seed."""
        return RandomStream(self.seed, branch=index)

    def _raw(self, n: int) -> np.ndarray:
        return self._bg.random_raw(n)

    def uniform(self, size) -> np.ndarray:
        """Uniforms in (0, 1]; the closed upper end keeps log() safe."""
        shape = (size,) if np.ndim(size) == 0 else tuple(size)
        n = int(np.prod(shape)) if shape else 1
        u = ((self._raw(n) >> np.uint64(11)) + np.uint64(1)) * _INV_2_53
        return u.reshape(shape)

    def normal(self, size) -> np.ndarray:
        """Standard normals via Box-Muller on the uniform stream."""
        shape = (size,) if np.ndim(size) == 0 else tuple(size)
        n = int(np.prod(shape)) if shape else 1
        half = (n + 1) // 2
        u1 = self.uniform(half)
        u2 = self.uniform(half)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])
        return z[:n].reshape(shape)

    def rademacher(self, size) -> np.ndarray:
        """+-1 with equal probability, from the low bit of the raw stream."""
        shape = (size,) if np.ndim(size) == 0 else tuple(size)
        n = int(np.prod(shape)) if shape else 1
        bits = self._raw(n) & np.uint64(1)
        return (2.0 * bits.astype(np.float64) - 1.0).reshape(shape)
