"""Portable splitmix64 random streams.

The generator is counter based: draw ``i`` (1-based) of a stream with initial
state ``s`` is ``finalize(s + i * GAMMA mod 2**64)``, so bulk draws vectorize.
Real numbers use the top 53 bits: ``(z >> 11) * 2**-53`` in [0, 1).

Independent streams come from :func:`derive`, which folds a seed, a purpose tag
and an index into a fresh 64-bit state::

    state = finalize(finalize(finalize(seed) ^ fnv1a64(tag)) ^ index)
"""
from __future__ import annotations

import numpy as np

MASK = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def finalize(z: int) -> int:
    z &= MASK
    z = ((z ^ (z >> 30)) * _M1) & MASK
    z = ((z ^ (z >> 27)) * _M2) & MASK
    return z ^ (z >> 31)


def fnv1a64(tag: str) -> int:
    h = 0xCBF29CE484222325
    for byte in tag.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & MASK
    return h


def derive(seed: int, tag: str, index: int = 0) -> int:
    """State of the stream reserved for ``(seed, tag, index)``."""
    h = finalize(seed & MASK)
    h = finalize(h ^ fnv1a64(tag))
    return finalize(h ^ (index & MASK))


def _finalize_vec(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


class Rng:
    """A splitmix64 stream.

    >>> r = Rng(0)
    >>> hex(r.next_u64())
    '0xe220a8397b1dcdaf'
    """

    def __init__(self, state: int):
        self.state = state & MASK

    @classmethod
    def for_purpose(cls, seed: int, tag: str, index: int = 0) -> "Rng":
        return cls(derive(seed, tag, index))

    def next_u64(self) -> int:
        self.state = (self.state + GAMMA) & MASK
        return finalize(self.state)

    def random(self) -> float:
        return (self.next_u64() >> 11) * 2.0**-53

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def below(self, n: int) -> int:
        """Integer in [0, n) by floor(random() * n)."""
        return min(int(self.random() * n), n - 1)

    def u64_array(self, n: int) -> np.ndarray:
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            states = np.uint64(self.state) + steps * np.uint64(GAMMA)
            out = _finalize_vec(states)
        self.state = (self.state + n * GAMMA) & MASK
        return out

    def random_array(self, n: int) -> np.ndarray:
        return (self.u64_array(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def uniform_array(self, lo: float, hi: float, shape) -> np.ndarray:
        n = int(np.prod(shape))
        return (lo + (hi - lo) * self.random_array(n)).reshape(shape)

    def permutation(self, n: int) -> list[int]:
        """Fisher-Yates shuffle of range(n), swapping from the top down."""
        items = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]
        return items
