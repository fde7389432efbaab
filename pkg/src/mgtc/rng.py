"""Portable seeded generator used for every stochastic mask.

SplitMix64 (Steele, Lea & Flood 2014) with the reference constants::

    state += 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    return z ^ (z >> 31)

all arithmetic modulo 2**64. Bounded draws use rejection sampling: a raw
draw ``x`` is rejected while ``x < (2**64 - n) % n`` and ``x % n`` is
returned otherwise, so the result is exactly uniform on ``[0, n)``.

Shuffles are Fisher-Yates from the top: for ``i = n-1 .. 1`` swap
element ``i`` with element ``below(i + 1)``.

These rules are the whole contract; any language reproducing them gets
the same golden masks.
"""

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


class SplitMix64:
    def __init__(self, seed):
        self.state = int(seed) & _MASK64

    def next_u64(self):
        self.state = (self.state + _GAMMA) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
        return z ^ (z >> 31)

    def below(self, n):
        """Uniform integer in ``[0, n)``."""
        if n <= 0:
            raise ValueError(f"bound must be positive, got {n}")
        threshold = ((1 << 64) - n) % n
        while True:
            x = self.next_u64()
            if x >= threshold:
                return x % n

    def shuffle(self, items):
        """In-place Fisher-Yates shuffle of a list; returns the list."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]
        return items

    def permutation(self, n):
        return self.shuffle(list(range(n)))


def derive_seeds(seed, count):
    """Independent per-item seeds from one run-level seed."""
    rng = SplitMix64(seed)
    return [rng.next_u64() for _ in range(count)]
