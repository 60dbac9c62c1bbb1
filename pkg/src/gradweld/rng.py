"""Portable seeded random number generation.

Everything stochastic in this package flows through ``Xoshiro256StarStar``, a
pure-Python xoshiro256** generator whose four-word state is expanded from a
64-bit seed with splitmix64. Both algorithms are fully specified here, so a
port in any language that implements the same generator reproduces every
sampling stream bit-exactly.

Derived quantities are likewise pinned down:

* ``next_double``  -- 53-bit mantissa: ``(next_u64() >> 11) * 2**-53``
* ``next_below``   -- Lemire multiply-shift ``(next_u64() * n) >> 64``
  (deterministic; the modulo bias is negligible at the sizes used here)
* ``normal``       -- Box-Muller on two consecutive uniforms, sine value
  cached and returned on the next call
* ``shuffle``      -- Fisher-Yates, descending index, ``next_below(i + 1)``
"""

from __future__ import annotations

import math

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

# stream labels for derive_seed; fixed so every run stage gets its own stream
STREAM_TASK = 1
STREAM_BASE_TRAIN = 2
STREAM_MEMORY = 3
STREAM_FINETUNE = 4
STREAM_VERIFY = 5


def _mix64(x: int) -> int:
    """splitmix64 output function applied to a single 64-bit value."""
    x = (x + _GOLDEN) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_seed(seed: int, *keys: int) -> int:
    """Fold stream labels into a seed, yielding independent child seeds."""
    h = _mix64(seed & _MASK64)
    for key in keys:
        h = _mix64(h ^ _mix64(key & _MASK64))
    return h


class SplitMix64:
    """Reference splitmix64 stream, used to expand seeds into state words."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Xoshiro256StarStar:
    """xoshiro256** 1.0 (Blackman/Vigna), state seeded via splitmix64."""

    def __init__(self, seed: int):
        sm = SplitMix64(seed)
        self._s = [sm.next_u64() for _ in range(4)]
        self._spare_normal: float | None = None

    @classmethod
    def from_state(cls, state: tuple[int, int, int, int]) -> "Xoshiro256StarStar":
        """Build a generator from raw state words (known-answer tests)."""
        gen = cls(0)
        gen._s = [w & _MASK64 for w in state]
        return gen

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[1] * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s[1] << 17) & _MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def next_double(self) -> float:
        """Uniform double in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def next_below(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        if n <= 0:
            raise ValueError(f"bound must be positive, got {n}")
        return (self.next_u64() * n) >> 64

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.next_double()

    def normal(self) -> float:
        """Standard normal via Box-Muller; the paired value is cached."""
        if self._spare_normal is not None:
            z = self._spare_normal
            self._spare_normal = None
            return z
        u1 = ((self.next_u64() >> 11) + 1) * 2.0**-53  # (0, 1], log-safe
        u2 = (self.next_u64() >> 11) * 2.0**-53
        r = math.sqrt(-2.0 * math.log(u1))
        theta = 2.0 * math.pi * u2
        self._spare_normal = r * math.sin(theta)
        return r * math.cos(theta)

    def normals(self, n: int) -> list[float]:
        return [self.normal() for _ in range(n)]

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_below(i + 1)
            items[i], items[j] = items[j], items[i]

    def permutation(self, n: int) -> list[int]:
        items = list(range(n))
        self.shuffle(items)
        return items

    def sample_without_replacement(self, n: int, k: int) -> list[int]:
        """k distinct indices from range(n), partial Fisher-Yates."""
        if k > n:
            raise ValueError(f"cannot draw {k} distinct items from {n}")
        items = list(range(n))
        for i in range(k):
            j = i + self.next_below(n - i)
            items[i], items[j] = items[j], items[i]
        return items[:k]

    def split(self, n: int) -> list["Xoshiro256StarStar"]:
        """n child generators with independent streams, seeded off this one."""
        return [Xoshiro256StarStar(self.next_u64()) for _ in range(n)]
