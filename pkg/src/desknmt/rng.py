"""Project-wide splitmix64 generator.

Every stochastic step in the pipeline (splits, noising, sampling, dropout,
initialisation) draws from this generator so that a seed fixes the whole run.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def child_seed(seed: int, *keys: int) -> int:
    """Derive an independent stream seed from ``seed`` and integer keys.

    Each key is folded in with one splitmix64 step, so (seed, worker, index)
    triples give reproducible, well-separated child streams.
    """
    h = seed & MASK64
    for k in keys:
        h = mix64((h ^ (k & MASK64)) + GAMMA)
    return h


class Rng:
    """splitmix64: ``state += GAMMA`` then mix the new state."""

    __slots__ = ("state",)

    def __init__(self, seed: int = 0):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GAMMA) & MASK64
        return mix64(self.state)

    def uniform(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def below(self, n: int) -> int:
        """Integer in [0, n) by 64x64 multiply-high."""
        if n <= 0:
            raise ValueError(f"below() needs n > 0, got {n}")
        return (self.next_u64() * n) >> 64

    def child(self, *keys: int) -> "Rng":
        return Rng(child_seed(self.state, *keys))

    def shuffle(self, items: list) -> list:
        """In-place Fisher-Yates, walking from the back."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]
        return items

    def sample_indices(self, n: int, k: int) -> list[int]:
        """k distinct indices from range(n): the prefix of a partial Fisher-Yates."""
        idx = list(range(n))
        for i in range(k):
            j = i + self.below(n - i)
            idx[i], idx[j] = idx[j], idx[i]
        return idx[:k]

    def poisson(self, lam: float, cap: int = 1000) -> int:
        """Inversion sampling from one uniform draw."""
        u = self.uniform()
        k = 0
        p = math.exp(-lam)
        cdf = p
        while u > cdf and k < cap:
            k += 1
            p *= lam / k
            cdf += p
        return k

    def categorical(self, weights) -> int:
        total = math.fsum(weights)
        if total <= 0:
            raise ValueError("categorical() needs a positive total weight")
        u = self.uniform() * total
        acc = 0.0
        last = 0
        for i, w in enumerate(weights):
            if w <= 0:
                continue
            acc += w
            last = i
            if u < acc:
                return i
        return last

    def u64_array(self, n: int) -> np.ndarray:
        """The next ``n`` outputs as a uint64 array; same stream as ``next_u64``."""
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * np.uint64(GAMMA)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * GAMMA) & MASK64
        return z

    def uniform_array(self, shape, dtype=np.float64) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        bits = self.u64_array(n) >> np.uint64(11)
        return (bits.astype(np.float64) * (1.0 / (1 << 53))).reshape(shape).astype(dtype)
