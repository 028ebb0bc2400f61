"""Central finite-difference verification of taped gradients."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Protocol

import numpy as np

from .autodiff import Gradients, IndexedRows, Parameter, Tape
from .rng import Rng

# Denominator floor for the relative error. A central difference with step
# 1e-5 on a loss near 20 carries ~1e-10 of rounding, so gradients below the
# floor cannot be resolved to 1e-4 relative and are compared absolutely.
REL_FLOOR = 1e-5


class Differentiable(Protocol):
    def parameters(self) -> list[Parameter]: ...

    def loss(self, sequence: Any, training: bool = False): ...


@dataclass
class CheckedEntry:
    name: str
    index: tuple[int, ...]
    analytic: float
    numeric: float

    @property
    def rel_error(self) -> float:
        return abs(self.analytic - self.numeric) / max(abs(self.analytic), abs(self.numeric), REL_FLOOR)


def _loss_value(model: Differentiable, sequence) -> float:
    return float(model.loss(sequence, training=False).value)


def _candidates(p: Parameter, g) -> np.ndarray:
    if isinstance(g, IndexedRows):
        cols = p.shape[1]
        return (g.rows[:, None] * cols + np.arange(cols)[None, :]).ravel()
    return np.arange(p.value.size)


def check_entries(model: Differentiable, sequence, epsilon: float = 1e-5, n_samples: int = 200,
                  seed: int = 0) -> list[CheckedEntry]:
    """Compare backprop with central differences on sampled entries.

    Samples are spread evenly across parameter tensors; embedding tables are
    sampled only on rows the sequence touches.
    """
    if not epsilon > 0 or not math.isfinite(epsilon):
        raise ValueError(f"epsilon must be a positive finite step, got {epsilon}")
    params = model.parameters()
    with Tape() as tape:
        loss = model.loss(sequence, training=False)
        grads: Gradients = tape.backward(loss)
    rng = Rng(seed)
    per_param = max(1, math.ceil(n_samples / len(params)))
    entries: list[CheckedEntry] = []
    for p in params:
        g = grads.get(p)
        dense = grads.dense(p)
        pool = _candidates(p, g)
        picks = [int(pool[rng.randbelow(pool.size)]) for _ in range(min(per_param, pool.size))]
        flat = p.value.reshape(-1)
        for k in picks:
            orig = flat[k]
            flat[k] = orig + epsilon
            up = _loss_value(model, sequence)
            flat[k] = orig - epsilon
            down = _loss_value(model, sequence)
            flat[k] = orig
            idx = np.unravel_index(k, p.shape)
            entries.append(CheckedEntry(p.name, tuple(int(i) for i in idx),
                                        float(dense.reshape(-1)[k]), (up - down) / (2 * epsilon)))
    return entries


def gradient_check(model: Differentiable, sequence, epsilon: float = 1e-5, n_samples: int = 200,
                   seed: int = 0) -> float:
    """Maximum relative error between backprop and central differences."""
    entries = check_entries(model, sequence, epsilon, n_samples, seed)
    return max(e.rel_error for e in entries)
