"""Counter-based random streams for reproducible parallel simulation.

Each stream is an independent keyed sequence: draw k of stream (seed, idx)
is a pure function of (seed, idx, k).  Results are therefore identical
however paths are scheduled or batched, which is what makes simulation
output bit-reproducible for a fixed seed.

The generator is the splitmix64 finalizer applied to a Weyl sequence,
a standard construction with full 64-bit state and no correlations
detectable at the scales used here (tested against exponential-law
statistics in the test suite).
"""

from __future__ import annotations

import math

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_INV53 = 1.0 / (1 << 53)
# smallest positive double; returned instead of 0.0 so log() stays finite
_TINY = 5e-324


def mix64(z: int) -> int:
    """splitmix64 finalizer: bijective avalanche mix of a 64-bit word."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_key(seed: int, *indices: int) -> int:
    """Fold a seed and any number of sub-indices into one stream key."""
    key = mix64((seed & _MASK) ^ 0x5851F42D4C957F2D)
    for ix in indices:
        key = mix64((key + _GOLDEN) ^ mix64((ix & _MASK) + 1))
    return key | 1  # odd keys keep the Weyl walk full-period


class SubStream:
    """One keyed stream with an explicit draw counter.

    Methods advance the counter by exactly one draw each, so the k-th
    value of a stream never depends on how earlier values were used.
    """

    __slots__ = ("key", "counter")

    def __init__(self, seed: int, *indices: int):
        self.key = derive_key(seed, *indices)
        self.counter = 0

    def next_u01(self) -> float:
        """Uniform on (0, 1]; never returns exactly 0."""
        z = (self.key + self.counter * _GOLDEN) & _MASK
        self.counter += 1
        u = (mix64(z) >> 11) * _INV53
        return u if u > 0.0 else _TINY

    def next_exponential(self, rate: float) -> float:
        """Exponential holding time with the given rate (> 0)."""
        return -math.log(self.next_u01()) / rate

    def next_choice(self, cumulative) -> int:
        """Index drawn from a cumulative weight array (last entry = total)."""
        u = self.next_u01() * cumulative[-1]
        lo, hi = 0, len(cumulative) - 1
        while lo < hi:
            mid = (lo + hi) >> 1
            if cumulative[mid] < u:
                lo = mid + 1
            else:
                hi = mid
        return lo
