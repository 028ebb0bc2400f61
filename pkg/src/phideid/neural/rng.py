"""Portable 64-bit linear congruential generator.

Every random decision in the package (corpus generation, dataset splits,
parameter initialization, shuffling, dropout masks) draws from this generator
so that a seed fixes the whole pipeline on every platform.

Recurrence (Knuth's MMIX constants)::

    state <- (6364136223846793005 * state + 1442695040888963407) mod 2**64

A float in [0, 1) is the top 53 bits of the new state times 2**-53.  Bulk
draws use closed-form jump-ahead so ``rng.random(n)`` returns exactly the same
values as ``n`` successive scalar draws.
"""
from __future__ import annotations

from typing import MutableSequence, Sequence, TypeVar

import numpy as np

MULTIPLIER = 6364136223846793005
INCREMENT = 1442695040888963407
MASK64 = (1 << 64) - 1

_BLOCK = 4096
_SCALE = 2.0 ** -53

T = TypeVar("T")


def _jump_tables(n: int) -> tuple[np.ndarray, np.ndarray]:
    mult = np.empty(n, dtype=np.uint64)
    add = np.empty(n, dtype=np.uint64)
    m, a = 1, 0
    for k in range(n):
        m = (m * MULTIPLIER) & MASK64
        a = (a * MULTIPLIER + INCREMENT) & MASK64
        mult[k] = m
        add[k] = a
    return mult, add


_MULT, _ADD = _jump_tables(_BLOCK)


def _fnv1a(text: str) -> int:
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * 0x100000001B3) & MASK64
    return h


class Rng:
    """Seeded LCG stream.  Not cryptographic."""

    __slots__ = ("state",)

    def __init__(self, seed: int = 0):
        self.state = int(seed) & MASK64

    def __repr__(self) -> str:
        return f"Rng(state={self.state:#018x})"

    def derive(self, name: str) -> "Rng":
        """Independent child stream keyed by ``name``; does not advance self."""
        return Rng(self.state ^ _fnv1a(name))

    def next_u64(self) -> int:
        self.state = (MULTIPLIER * self.state + INCREMENT) & MASK64
        return self.state

    def random_scalar(self) -> float:
        return (self.next_u64() >> 11) * _SCALE

    def randbelow(self, n: int) -> int:
        """Integer in [0, n) by multiply-shift of the top 53 bits."""
        if n <= 0:
            raise ValueError("randbelow requires n >= 1")
        return ((self.next_u64() >> 11) * n) >> 53

    def random(self, n: int) -> np.ndarray:
        """``n`` floats in [0, 1), identical to ``n`` calls of random_scalar."""
        out = np.empty(n, dtype=np.float64)
        done = 0
        while done < n:
            k = min(_BLOCK, n - done)
            states = _MULT[:k] * np.uint64(self.state) + _ADD[:k]
            out[done:done + k] = (states >> np.uint64(11)).astype(np.float64) * _SCALE
            self.state = int(states[k - 1])
            done += k
        return out

    def uniform(self, low: float, high: float, shape: int | tuple[int, ...]) -> np.ndarray:
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        size = int(np.prod(shape)) if shape else 1
        return (low + (high - low) * self.random(size)).reshape(shape)

    def choice(self, items: Sequence[T]) -> T:
        if not items:
            raise ValueError("choice from empty sequence")
        return items[self.randbelow(len(items))]

    def weighted_index(self, weights: Sequence[float]) -> int:
        total = float(sum(weights))
        if total <= 0:
            raise ValueError("weights must have a positive sum")
        u = self.random_scalar() * total
        acc = 0.0
        for i, w in enumerate(weights):
            acc += w
            if u < acc:
                return i
        return len(weights) - 1

    def shuffle(self, items: MutableSequence) -> None:
        """In-place Fisher-Yates, walking from the end."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def permutation(self, n: int) -> list[int]:
        order = list(range(n))
        self.shuffle(order)
        return order
