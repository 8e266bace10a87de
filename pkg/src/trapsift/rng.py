"""Seeded, platform-independent sampling.

Split files must be reproducible across machines and languages, so sampling
does not go through ``random``. It uses SplitMix64, a 64-bit counter-based
generator: output ``i`` is a pure function of ``(seed, i)``, with selection
done by partial Fisher-Yates. All arithmetic is explicit 64-bit integer math.
"""

from __future__ import annotations

from typing import Sequence, TypeVar

T = TypeVar("T")

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def _mix64(z: int) -> int:
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class CounterRng:
    """SplitMix64 stream seeded with a 64-bit integer."""

    def __init__(self, seed: int):
        self._seed = seed & _MASK64
        self._counter = 0

    def next_u64(self) -> int:
        self._counter += 1
        return _mix64((self._seed + self._counter * _GAMMA) & _MASK64)

    def randbelow(self, n: int) -> int:
        """Uniform integer in [0, n), bias-free via rejection sampling."""
        if n <= 0:
            raise ValueError(f"randbelow requires n >= 1, got {n}")
        span = _MASK64 + 1
        limit = span - (span % n)
        while True:
            draw = self.next_u64()
            if draw < limit:
                return draw % n

    def sample(self, items: Sequence[T], k: int) -> list[T]:
        """k items without replacement, by partial Fisher-Yates.

        The selection depends only on the order of ``items``, the seed, and
        the stream position; callers wanting order-independent results must
        pass a canonically ordered sequence.
        """
        pool = list(items)
        if not 0 <= k <= len(pool):
            raise ValueError(f"cannot sample {k} of {len(pool)} items")
        for i in range(k):
            j = i + self.randbelow(len(pool) - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]

    def shuffle(self, items: Sequence[T]) -> list[T]:
        return self.sample(items, len(items))
