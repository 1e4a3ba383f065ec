"""Counter-based splittable PRNG keys.

Every source of randomness in the library is an explicit, immutable
128-bit :class:`PrngKey`.  New keys are derived by folding integer
coordinates (chain index, epoch index, iteration, kernel index, ...)
into a parent key with a Threefry-2x64 block cipher, so distinct
coordinate tuples yield independent streams and the same seed always
reproduces the same chains.  Actual draws are produced by a numpy
``Generator`` backed by the counter-based Philox bit generator keyed
with the 128-bit key.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF
_PARITY = 0x1BD11BDAA9FC1A22
# Threefry-2x64 rotation schedule (Random123).
_ROTATIONS = (16, 42, 12, 31, 16, 32, 24, 21)
_ROUNDS = 20

# Domain tags keeping derivation paths for different purposes disjoint.
_TAG_SPLIT = 0x5B5B5B5B


def _rotl(x: int, r: int) -> int:
    return ((x << r) | (x >> (64 - r))) & _MASK64


def _threefry2x64(k0: int, k1: int, c0: int, c1: int) -> tuple[int, int]:
    """Encrypt the counter (c0, c1) under the key (k0, k1)."""
    ks = (k0, k1, _PARITY ^ k0 ^ k1)
    x0 = (c0 + k0) & _MASK64
    x1 = (c1 + k1) & _MASK64
    for r in range(_ROUNDS):
        x0 = (x0 + x1) & _MASK64
        x1 = _rotl(x1, _ROTATIONS[r % 8]) ^ x0
        if (r + 1) % 4 == 0:
            j = (r + 1) // 4
            x0 = (x0 + ks[j % 3]) & _MASK64
            x1 = (x1 + ks[(j + 1) % 3] + j) & _MASK64
    return x0, x1


@dataclass(frozen=True)
class PrngKey:
    """Immutable 128-bit key identifying one pseudo-random stream."""

    hi: int
    lo: int

    @classmethod
    def from_seed(cls, seed: int) -> "PrngKey":
        if seed < 0:
            raise ValueError("seed must be non-negative")
        # Whiten the seed so nearby seeds give unrelated root keys.
        hi, lo = _threefry2x64(
            0x243F6A8885A308D3, 0x13198A2E03707344, seed & _MASK64, seed >> 64
        )
        return cls(hi, lo)

    def fold_in(self, *data: int) -> "PrngKey":
        """Derive a new key from integer coordinates.

        Folding is sequential, so ``k.fold_in(a, b)`` equals
        ``k.fold_in(a).fold_in(b)``; distinct tuples give distinct keys.
        """
        hi, lo = self.hi, self.lo
        for d in data:
            if d < 0:
                raise ValueError("fold_in data must be non-negative")
            hi, lo = _threefry2x64(hi, lo, d & _MASK64, d >> 64)
        return PrngKey(hi, lo)

    def split(self, n: int) -> tuple["PrngKey", ...]:
        """Produce ``n`` independent child keys."""
        return tuple(self.fold_in(_TAG_SPLIT, i) for i in range(n))

    def generator(self) -> np.random.Generator:
        """A fresh numpy Generator for this key.

        Calling it twice gives two generators producing the identical
        stream; that is the point -- a key names a stream.
        """
        return np.random.Generator(np.random.Philox(key=(self.hi << 64) | self.lo))
