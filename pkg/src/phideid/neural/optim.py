from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .autodiff import Gradients, IndexedRows, Parameter


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.005
    gradient_clip_norm: float = 5.0
    dropout_p: float = 0.5

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must lie in [0, 1)")
        if not self.gradient_clip_norm > 0:
            raise ValueError("gradient_clip_norm must be > 0 (use math.inf to disable)")


def global_norm(grads: Gradients) -> float:
    total = 0.0
    for p, g in grads.items():
        sq = g.sq_norm() if isinstance(g, IndexedRows) else float(np.vdot(g, g))
        if not math.isfinite(sq):
            raise NonFiniteGradientError(f"non-finite gradient for tensor {p.name!r}")
        total += sq
    return math.sqrt(total)


def sgd_step(params: Iterable[Parameter], grads: Gradients, cfg: SgdConfig) -> list[Parameter]:
    """Clip by global norm, then ``p -= lr * g`` in place for every parameter."""
    params = list(params)
    norm = global_norm(grads)
    factor = cfg.learning_rate
    if norm > cfg.gradient_clip_norm:
        factor *= cfg.gradient_clip_norm / norm
    for p in params:
        g = grads.get(p)
        if g is None:
            continue
        if isinstance(g, IndexedRows):
            p.value[g.rows] -= factor * g.values
        else:
            p.value -= factor * g
    return params
