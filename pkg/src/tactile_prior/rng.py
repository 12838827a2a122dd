"""splitmix64-seeded xoshiro256** streams.

Every consumer asks for ``stream(master_seed, *key)``; the key (ints and
strings) is folded into the seed so that each sample gets its own
generator and results never depend on iteration order.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_LANES = 64


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step: returns (next_state, output)."""
    state = (state + _GOLDEN) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


def _key_int(part) -> int:
    if isinstance(part, (bool, np.bool_)):
        part = int(part)
    if isinstance(part, (int, np.integer)):
        return int(part) & MASK64
    digest = hashlib.blake2b(str(part).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_seed(master_seed: int, *key) -> int:
    s = int(master_seed) & MASK64
    for part in key:
        s, out = splitmix64(s ^ _key_int(part))
        s = out
    return s


class Xoshiro256:
    """xoshiro256** with convenience samplers."""

    def __init__(self, seed: int):
        s = int(seed) & MASK64
        state = []
        for _ in range(4):
            s, out = splitmix64(s)
            state.append(out)
        self.s = state

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self.s
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self.s = [s0, s1, s2, s3]
        return result

    def random(self) -> float:
        """Uniform in [0, 1) with 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        return lo + (hi - lo) * self.random()

    def integer(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        return int(self.random() * n)

    def normal(self) -> float:
        u1 = 1.0 - self.random()
        u2 = self.random()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def permutation(self, n: int) -> list[int]:
        items = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.integer(i + 1)
            items[i], items[j] = items[j], items[i]
        return items

    def random_array(self, shape) -> np.ndarray:
        """Uniform [0,1) array from 64 parallel xoshiro256** lanes.

        Lane seeds come from this generator, so the array is a pure function
        of the generator state.
        """
        n = int(np.prod(shape, dtype=np.int64))
        lanes = _LanePool(self.next_u64())
        return lanes.uniform(n).reshape(shape)

    def normal_array(self, shape) -> np.ndarray:
        n = int(np.prod(shape, dtype=np.int64))
        u = _LanePool(self.next_u64()).uniform(2 * n)
        u1 = 1.0 - u[:n]
        u2 = u[n:]
        return (np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)).reshape(shape)


class _LanePool:
    """Vectorized xoshiro256** over independent lanes (numpy uint64 wraps mod 2**64)."""

    def __init__(self, seed: int):
        s = seed
        seeds = np.empty((4, _LANES), dtype=np.uint64)
        for lane in range(_LANES):
            for word in range(4):
                s, out = splitmix64(s)
                seeds[word, lane] = out
        self.s = seeds

    @staticmethod
    def _rotl(x: np.ndarray, k: int) -> np.ndarray:
        return (x << np.uint64(k)) | (x >> np.uint64(64 - k))

    def _next(self) -> np.ndarray:
        s0, s1, s2, s3 = self.s
        result = self._rotl(s1 * np.uint64(5), 7) * np.uint64(9)
        t = s1 << np.uint64(17)
        s2 = s2 ^ s0
        s3 = s3 ^ s1
        s1 = s1 ^ s2
        s0 = s0 ^ s3
        s2 = s2 ^ t
        s3 = self._rotl(s3, 45)
        self.s = np.stack([s0, s1, s2, s3])
        return result

    def uniform(self, n: int) -> np.ndarray:
        steps = -(-n // _LANES)
        with np.errstate(over="ignore"):
            rows = [self._next() for _ in range(steps)]
        words = np.concatenate(rows)[:n] if rows else np.empty(0, dtype=np.uint64)
        return (words >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


def stream(master_seed: int, *key) -> Xoshiro256:
    return Xoshiro256(derive_seed(master_seed, *key))
