"""Seeded uniform/normal streams on the Philox4x64-10 counter-based generator.

A stream is identified by ``(seed, index)``; the pair becomes the 128-bit
Philox key, so replication ``r`` of a run seeded with ``s`` always reads the
same counter sequence regardless of how many other streams exist or in what
order they are consumed.  Each uniform consumes one 64-bit output; each
normal consumes exactly one uniform (inverse CDF).
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

GENERATOR_NAME = "Philox4x64-10 (numpy), key=(seed, stream index), normals by inverse CDF"

_MASK64 = (1 << 64) - 1
_TWO_M53 = 2.0 ** -53


class Stream:
    def __init__(self, seed: int, index: int = 0):
        if seed < 0 or index < 0:
            raise ValueError("seed and stream index must be non-negative")
        self.seed = int(seed) & _MASK64
        self.index = int(index) & _MASK64
        key = np.array([self.seed, self.index], dtype=np.uint64)
        self._bits = np.random.Philox(key=key)

    def uniform(self, n: int) -> np.ndarray:
        """``n`` doubles strictly inside (0, 1): ``(k + 1/2) / 2**53``."""
        raw = self._bits.random_raw(n)
        return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53

    def normal(self, n: int) -> np.ndarray:
        return ndtri(self.uniform(n))


def split(seed: int, index: int) -> Stream:
    """Sub-stream ``index`` of ``seed``."""
    return Stream(seed, index)
