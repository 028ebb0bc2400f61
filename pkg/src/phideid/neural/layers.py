"""LSTM, bi-LSTM, feedforward and dropout building blocks.

Each block has a plain-array forward (``lstm_step``, ``bilstm``,
``feedforward``, ``dropout``) used for inspection and oracle tests, and a
taped counterpart (``lstm_sequence``, ``dense``, ``apply_dropout``) used inside
the model.  Gate order is ``[input, forget, output, candidate]``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import Parameter, Tensor
from .rng import Rng

FORGET_BIAS = 1.0


def glorot(rng: Rng, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, (fan_in, fan_out))


@dataclass
class LstmParams:
    W: Parameter  # (input_dim, 4H)
    U: Parameter  # (H, 4H)
    b: Parameter  # (4H,)

    @classmethod
    def init(cls, name: str, input_dim: int, hidden_dim: int, rng: Rng) -> "LstmParams":
        if input_dim < 1 or hidden_dim < 1:
            raise ValueError("LSTM dimensions must be >= 1")
        b = np.zeros(4 * hidden_dim)
        b[hidden_dim:2 * hidden_dim] = FORGET_BIAS
        return cls(
            W=Parameter(glorot(rng, input_dim, 4 * hidden_dim), f"{name}.W"),
            U=Parameter(glorot(rng, hidden_dim, 4 * hidden_dim), f"{name}.U"),
            b=Parameter(b, f"{name}.b"),
        )

    @property
    def input_dim(self) -> int:
        return self.W.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.U.shape[0]

    def parameters(self) -> list[Parameter]:
        return [self.W, self.U, self.b]


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def lstm_step(params: LstmParams, x, h_prev, c_prev) -> tuple[np.ndarray, np.ndarray]:
    H = params.hidden_dim
    x, h_prev, c_prev = (np.asarray(v, dtype=np.float64) for v in (x, h_prev, c_prev))
    if x.shape != (params.input_dim,) or h_prev.shape != (H,) or c_prev.shape != (H,):
        raise ValueError(
            f"lstm_step: expected x ({params.input_dim},), h/c ({H},); "
            f"got {x.shape}, {h_prev.shape}, {c_prev.shape}"
        )
    z = x @ params.W.value + h_prev @ params.U.value + params.b.value
    i, f, o = _sigmoid(z[:H]), _sigmoid(z[H:2 * H]), _sigmoid(z[2 * H:3 * H])
    g = np.tanh(z[3 * H:])
    c = f * c_prev + i * g
    return o * np.tanh(c), c


def _run(params: LstmParams, xs: np.ndarray) -> np.ndarray:
    xproj = (xs @ params.W.value + params.b.value)[:, None, :]
    hs, _, _ = kernels.lstm_forward(xproj, params.U.value)
    return hs[:, 0, :]


def bilstm(params_fwd: LstmParams, params_bwd: LstmParams, xs: Sequence) -> list[np.ndarray]:
    """Per-position concatenation of forward and backward hidden states."""
    if len(xs) == 0:
        raise ValueError("bilstm: empty input")
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != params_fwd.input_dim or xs.shape[1] != params_bwd.input_dim:
        raise ValueError(f"bilstm: inputs {xs.shape} do not match input_dim")
    fwd = _run(params_fwd, xs)
    bwd = _run(params_bwd, xs[::-1])[::-1]
    return list(np.concatenate([fwd, bwd], axis=1))


def feedforward(W, b, x, activation=np.tanh) -> np.ndarray:
    W, b, x = (np.asarray(getattr(v, "value", v), dtype=np.float64) for v in (W, b, x))
    if W.ndim != 2 or x.shape != (W.shape[0],) or b.shape != (W.shape[1],):
        raise ValueError(f"feedforward: W {W.shape}, b {b.shape}, x {x.shape} are inconsistent")
    return activation(x @ W + b)


def dropout_mask(shape: tuple[int, ...], p: float, rng: Rng) -> np.ndarray:
    """Inverted-dropout multiplier: 0 with probability p, else 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if p == 0.0:
        return np.ones(shape)
    keep = rng.uniform(0.0, 1.0, shape) >= p
    return keep / (1.0 - p)


def dropout(x, p: float, rng: Rng, training: bool) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    return x * dropout_mask(x.shape, p, rng)


# taped versions -----------------------------------------------------------

def lstm_sequence(params: LstmParams, xs: Tensor) -> Tensor:
    """Hidden states (L, B, H) for inputs (L, B, D); every column starts from zeros."""
    L, B, D = xs.shape
    flat = ad.reshape(xs, (L * B, D))
    proj = ad.affine(flat, params.W, params.b)
    return ad.lstm(ad.reshape(proj, (L, B, 4 * params.hidden_dim)), params.U)


def lstm_sequence_primitive(params: LstmParams, xs: Tensor) -> Tensor:
    """Same function as :func:`lstm_sequence` built from elementwise primitives.

    Much slower; exists so the fused kernel's backward can be checked against
    a composition of independently differentiated operations.
    """
    L, B, D = xs.shape
    H = params.hidden_dim
    h = ad.constant(np.zeros((B, H)))
    c = ad.constant(np.zeros((B, H)))
    outs = []
    for t in range(L):
        x_t = ad.reshape(ad.rows(xs, np.array([t])), (B, D))
        z = ad.add(ad.affine(x_t, params.W, params.b), ad.matmul(h, params.U))
        i = ad.sigmoid(ad.columns(z, 0, H))
        f = ad.sigmoid(ad.columns(z, H, 2 * H))
        o = ad.sigmoid(ad.columns(z, 2 * H, 3 * H))
        g = ad.tanh(ad.columns(z, 3 * H, 4 * H))
        c = ad.add(ad.mul(f, c), ad.mul(i, g))
        h = ad.mul(o, ad.tanh(c))
        outs.append(ad.reshape(h, (1, B, H)))
    return ad.concat(outs, axis=0)


def dense(x: Tensor, W: Parameter, b: Parameter) -> Tensor:
    return ad.tanh(ad.affine(x, W, b))


def apply_dropout(x: Tensor, p: float, rng: Rng, training: bool) -> Tensor:
    if not training or p == 0.0:
        return x
    return ad.scale(x, dropout_mask(x.shape, p, rng))
