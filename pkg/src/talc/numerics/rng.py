"""Seeded counter-based random streams (Philox 4x64).

Child streams are derived from (seed, key) through ``SeedSequence`` so every
pipeline stage gets an independent, reproducible stream from one root seed.
"""
import zlib

import numpy as np

ALGORITHM = "philox4x64"


def _key_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFFFFFFFFFF
    return zlib.crc32(str(key).encode("utf-8"))


class Rng:
    def __init__(self, seed: int, _path: tuple = ()):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.algorithm = ALGORITHM
        self._path = tuple(_path)
        ss = np.random.SeedSequence([self.seed, *self._path])
        self._gen = np.random.Generator(np.random.Philox(ss))

    def child(self, key) -> "Rng":
        """Independent stream for a named sub-stage."""
        return Rng(self.seed, self._path + (_key_int(key),))

    def normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def choice(self, seq, size=None, replace=True, p=None):
        return self._gen.choice(seq, size=size, replace=replace, p=p)

    def random(self) -> float:
        return float(self._gen.random())

    def permutation(self, n):
        return self._gen.permutation(n)

    def __repr__(self):
        return f"Rng(seed={self.seed}, path={self._path})"
