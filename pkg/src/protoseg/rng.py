"""Deterministic 64-bit PRNG for batch shuffling.

xoshiro256** with splitmix64 seeding, so shuffle traces are reproducible
across implementations from the seed alone.
"""
from __future__ import annotations

import hashlib
from typing import MutableSequence

_MASK = (1 << 64) - 1


def _splitmix64(state: int) -> tuple[int, int]:
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, (z ^ (z >> 31)) & _MASK


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK


class Xoshiro256StarStar:
    """xoshiro256**; state seeded by four splitmix64 outputs."""

    def __init__(self, seed: int):
        state = seed & _MASK
        self._s = []
        for _ in range(4):
            state, word = _splitmix64(state)
            self._s.append(word)
        if not any(self._s):  # all-zero state is a fixed point
            self._s[0] = 1

    def next_uint64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK, 7) * 9) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def below(self, n: int) -> int:
        """Uniform integer in [0, n) without modulo bias."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            r = self.next_uint64()
            if r < limit:
                return r % n

    def shuffle(self, seq: MutableSequence) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(seq) - 1, 0, -1):
            j = self.below(i + 1)
            seq[i], seq[j] = seq[j], seq[i]

    def state_digest(self) -> str:
        raw = b"".join(word.to_bytes(8, "little") for word in self._s)
        return hashlib.sha256(raw).hexdigest()
