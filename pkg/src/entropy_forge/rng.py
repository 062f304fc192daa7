"""Seeded, label-addressed random streams.

Every random draw in the library goes through a :class:`SeedStream`.  A stream
is a Philox counter-based generator keyed by ``(master seed, label path)``, so
two modules that spawn differently labelled children never perturb each
other's draws.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import ParameterError


def _philox_key(seed: int, label: str) -> int:
    digest = hashlib.sha256(f"{seed}\x00{label}".encode()).digest()
    return int.from_bytes(digest[:16], "big")


class SeedStream:
    """Deterministic source of uniform bits and bounded integers."""

    def __init__(self, seed: int, label: str = "root") -> None:
        if seed < 0:
            raise ParameterError("seed must be non-negative")
        self.seed = seed
        self.label = label
        self._bitgen = np.random.Philox(key=_philox_key(seed, label))
        self.words_used = 0

    def spawn(self, label: str) -> SeedStream:
        """Independent child stream; depends only on the seed and the label path."""
        return SeedStream(self.seed, f"{self.label}/{label}")

    def bits(self, k: int) -> int:
        """Uniform integer in ``[0, 2**k)``."""
        if k < 0:
            raise ParameterError("bit count must be non-negative")
        if k == 0:
            return 0
        words = (k + 63) // 64
        raw = self._bitgen.random_raw(words)
        self.words_used += words
        value = 0
        for w in raw.tolist():
            value = (value << 64) | w
        return value >> (64 * words - k)

    def below(self, n: int) -> int:
        """Uniform integer in ``[0, n)`` by rejection sampling (no draw when n == 1)."""
        if n < 1:
            raise ParameterError("range must be positive")
        if n == 1:
            return 0
        width = (n - 1).bit_length()
        while True:
            v = self.bits(width)
            if v < n:
                return v

    def bit(self) -> int:
        return self.bits(1)

    def __repr__(self) -> str:
        return f"SeedStream(seed={self.seed}, label={self.label!r})"
