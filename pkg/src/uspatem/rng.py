"""Deterministic, splittable random streams.

Every stream is a numpy Philox generator whose 256-bit key is derived with
SHA-256 from the root seed and the path of split labels, so a given
(seed, path) pair yields the same draw sequence on every platform and in
every process. Child streams are independent of draw order on the parent.
"""

from __future__ import annotations

import hashlib

import numpy as np


class Rng:
    """Counter-based RNG with hash-derived child streams."""

    def __init__(self, seed: int, _path: str = ""):
        self.seed = int(seed)
        self._path = _path
        digest = hashlib.sha256(
            self.seed.to_bytes(8, "little", signed=True) + _path.encode()
        ).digest()
        key = np.frombuffer(digest[:32], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def split(self, *labels) -> "Rng":
        """Derive an independent child stream named by the labels."""
        suffix = "/".join(str(x) for x in labels)
        return Rng(self.seed, f"{self._path}/{suffix}")

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def uniform(self, low=0.0, high=1.0, size=None, dtype=np.float32):
        return self._gen.uniform(low, high, size).astype(dtype, copy=False)

    def normal(self, std=1.0, size=None, dtype=np.float32):
        return (self._gen.standard_normal(size) * std).astype(dtype, copy=False)

    def trunc_normal(self, std, size, dtype=np.float32):
        """Normal draws resampled until within 2 standard deviations."""
        out = self._gen.standard_normal(size)
        bad = np.abs(out) > 2.0
        while bad.any():
            out[bad] = self._gen.standard_normal(int(bad.sum()))
            bad = np.abs(out) > 2.0
        return (out * std).astype(dtype, copy=False)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, seq, size=None, replace=True):
        return self._gen.choice(seq, size=size, replace=replace)

    def __repr__(self):
        return f"Rng(seed={self.seed}, path={self._path!r})"
