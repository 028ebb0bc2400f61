"""Tape-based reverse-mode differentiation over numpy arrays.

Operations executed inside ``with Tape() as tape:`` record a backward closure
whenever one of their inputs requires a gradient.  ``tape.backward(loss)``
replays the closures in reverse and returns a :class:`Gradients` mapping from
each reachable :class:`Parameter` to its gradient.  Embedding lookups produce
:class:`IndexedRows` gradients so that large tables are never densified.

Two graph granularities coexist: elementwise primitives (``sigmoid``, ``mul``
...) and fused nodes (``lstm``, ``crf_nll``) whose backward calls the compiled
kernels.  Tests compose the primitives into an LSTM and check that both routes
agree.
"""
from __future__ import annotations

from contextvars import ContextVar
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import kernels

_ACTIVE: ContextVar["Tape | None"] = ContextVar("phideid_active_tape", default=None)


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "name", "_rows", "__weakref__")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._rows: list[tuple[np.ndarray, np.ndarray]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"<{type(self).__name__}{label} shape={self.shape}>"


class Parameter(Tensor):
    """A trainable tensor; always requires a gradient."""

    __slots__ = ()

    def __init__(self, value, name: str):
        super().__init__(value, requires_grad=True, name=name)


@dataclass
class IndexedRows:
    """Sparse gradient of a 2-D table: ``values[k]`` belongs to row ``rows[k]``."""

    rows: np.ndarray
    values: np.ndarray
    shape: tuple[int, ...]

    def dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.rows] = self.values
        return out

    def sq_norm(self) -> float:
        return float(np.vdot(self.values, self.values))


class Gradients(dict):
    """Parameter -> ndarray | IndexedRows."""

    def dense(self, param: Parameter) -> np.ndarray:
        g = self.get(param)
        if g is None:
            return np.zeros(param.shape)
        return g.dense() if isinstance(g, IndexedRows) else g

    def by_name(self) -> dict[str, np.ndarray | IndexedRows]:
        return {p.name: g for p, g in self.items()}


class Tape:
    def __init__(self):
        self._nodes: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []
        self._outputs: set[int] = set()
        self._params: dict[int, Parameter] = {}
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self._nodes)

    def record(self, out: Tensor, backward: Callable[[np.ndarray], None], inputs: Sequence[Tensor] = ()) -> None:
        self._nodes.append((out, backward))
        self._outputs.add(id(out))
        for t in inputs:
            if isinstance(t, Parameter):
                self._params[id(t)] = t

    def backward(self, loss: Tensor) -> Gradients:
        if id(loss) not in self._outputs:
            raise RuntimeError("loss was not produced by an operation recorded on this tape")
        if loss.value.size != 1:
            raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.value)
        for out, fn in reversed(self._nodes):
            g = out.grad
            if g is not None:
                fn(g)
            out.grad = None
        grads = Gradients()
        for p in self._params.values():
            if p.grad is not None or p._rows:
                grads[p] = _collect(p)
        self._nodes.clear()
        self._outputs.clear()
        self._params.clear()
        return grads


def _collect(p: Parameter):
    dense, rows = p.grad, p._rows
    p.grad, p._rows = None, None
    if rows:
        idx = np.concatenate([r for r, _ in rows])
        vals = np.concatenate([v for _, v in rows])
        uniq, inv = np.unique(idx, return_inverse=True)
        summed = np.zeros((uniq.size, p.shape[1]))
        np.add.at(summed, inv, vals)
        sparse = IndexedRows(uniq, summed, p.shape)
        if dense is None:
            return sparse
        dense = dense.copy()
        dense[uniq] += summed
    return dense


def _acc(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if g.shape != t.value.shape:
        raise ValueError(f"gradient shape {g.shape} does not match {t.shape} for {t!r}")
    t.grad = g if t.grad is None else t.grad + g


def _result(value: np.ndarray, inputs: Sequence[Tensor], backward: Callable[[np.ndarray], None]) -> Tensor:
    tape = _ACTIVE.get()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=needs)
    if needs:
        tape.record(out, backward, inputs)
    return out


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def constant(value) -> Tensor:
    return Tensor(value)


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)

    def backward(g):
        _acc(a, g)
        _acc(b, g)

    return _result(a.value + b.value, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)

    def backward(g):
        _acc(a, g * b.value)
        _acc(b, g * a.value)

    return _result(a.value * b.value, (a, b), backward)


def scale(a: Tensor, factor: np.ndarray) -> Tensor:
    """Multiply by a constant array of the same shape (e.g. a dropout mask)."""
    factor = np.asarray(factor, dtype=np.float64)
    if factor.shape != a.shape:
        raise ValueError(f"scale: factor shape {factor.shape} vs {a.shape}")
    return _result(a.value * factor, (a,), lambda g: _acc(a, g * factor))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.value)
    return _result(y, (a,), lambda g: _acc(a, g * (1.0 - y * y)))


def sigmoid(a: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-a.value))
    return _result(y, (a,), lambda g: _acc(a, g * y * (1.0 - y)))


def matmul(x: Tensor, w: Tensor) -> Tensor:
    if x.value.ndim != 2 or w.value.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {x.shape} @ {w.shape}")

    def backward(g):
        if x.requires_grad:
            _acc(x, g @ w.value.T)
        _acc(w, x.value.T @ g)

    return _result(x.value @ w.value, (x, w), backward)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """``x @ w + b`` for x of shape (n, i), w (i, o), b (o,)."""
    if x.value.ndim != 2 or w.value.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ValueError(f"affine: incompatible shapes {x.shape} @ {w.shape}")
    if b.shape != (w.shape[1],):
        raise ValueError(f"affine: bias shape {b.shape}, expected {(w.shape[1],)}")

    def backward(g):
        if x.requires_grad:
            _acc(x, g @ w.value.T)
        _acc(w, x.value.T @ g)
        _acc(b, g.sum(axis=0))

    return _result(x.value @ w.value + b.value, (x, w, b), backward)


def total(a: Tensor) -> Tensor:
    return _result(np.asarray(a.value.sum()), (a,), lambda g: _acc(a, np.full(a.shape, float(g))))


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not parts:
        raise ValueError("concat of nothing")
    axis = axis % parts[0].value.ndim
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _acc(p, g[tuple(sl)])

    return _result(np.concatenate([p.value for p in parts], axis=axis), parts, backward)


def columns(a: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= a.shape[-1]:
        raise ValueError(f"columns: bad range [{start}, {stop}) for {a.shape}")

    def backward(g):
        full = np.zeros(a.shape)
        full[..., start:stop] = g
        _acc(a, full)

    return _result(a.value[..., start:stop], (a,), backward)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape)) != a.value.size:
        raise ValueError(f"reshape: cannot view {a.shape} as {shape}")
    return _result(a.value.reshape(shape), (a,), lambda g: _acc(a, g.reshape(a.shape)))


def rows(a: Tensor, index: np.ndarray) -> Tensor:
    """Gather along the first axis (used for time reversal)."""
    index = np.asarray(index, dtype=np.int64)

    def backward(g):
        full = np.zeros(a.shape)
        np.add.at(full, index, g)
        _acc(a, full)

    return _result(a.value[index], (a,), backward)


def take_rows(table: Tensor, index: np.ndarray) -> Tensor:
    """Embedding lookup; a Parameter table receives an IndexedRows gradient."""
    index = np.asarray(index, dtype=np.int64).ravel()
    if table.value.ndim != 2:
        raise ValueError("take_rows expects a 2-D table")
    if index.size and (index.min() < 0 or index.max() >= table.shape[0]):
        raise IndexError(f"take_rows: index out of range for table of {table.shape[0]} rows")

    def backward(g):
        if isinstance(table, Parameter):
            if table._rows is None:
                table._rows = []
            table._rows.append((index, g))
        elif table.requires_grad:
            full = np.zeros(table.shape)
            np.add.at(full, index, g)
            _acc(table, full)

    return _result(table.value[index], (table,), backward)


def gather_last(hs: Tensor, lengths: np.ndarray) -> Tensor:
    """From (L, B, H) pick step ``lengths[b] - 1`` for each batch column b."""
    lengths = np.asarray(lengths, dtype=np.int64)
    L, B, _ = hs.shape
    if lengths.shape != (B,) or lengths.min() < 1 or lengths.max() > L:
        raise ValueError("gather_last: lengths must lie in [1, L] for every column")
    steps = lengths - 1
    cols = np.arange(B)

    def backward(g):
        full = np.zeros(hs.shape)
        full[steps, cols] = g
        _acc(hs, full)

    return _result(hs.value[steps, cols], (hs,), backward)


def lstm(xproj: Tensor, U: Tensor) -> Tensor:
    """Fused LSTM recurrence over pre-projected inputs of shape (L, B, 4H)."""
    if xproj.value.ndim != 3 or U.value.ndim != 2 or xproj.shape[2] != U.shape[1] or U.shape[1] != 4 * U.shape[0]:
        raise ValueError(f"lstm: incompatible shapes xproj {xproj.shape}, U {U.shape}")
    hs, cs, acts = kernels.lstm_forward(xproj.value, U.value)

    def backward(g):
        dx, dU = kernels.lstm_backward(g, U.value, hs, cs, acts)
        _acc(xproj, dx)
        _acc(U, dU)

    return _result(hs, (xproj, U), backward)


def crf_path_score(em: np.ndarray, trans: np.ndarray, path: Sequence[int]) -> float:
    K = em.shape[1]
    score = trans[K, path[0]] + em[0, path[0]]
    for t in range(1, len(path)):
        score += trans[path[t - 1], path[t]] + em[t, path[t]]
    return float(score + trans[path[-1], K + 1])


def crf_nll(em: Tensor, trans: Tensor, gold: Sequence[int]) -> Tensor:
    """Negative log-likelihood of ``gold`` under a linear-chain CRF."""
    T, K = em.shape
    gold = np.asarray(gold, dtype=np.int64)
    if trans.shape != (K + 2, K + 2):
        raise ValueError(f"crf_nll: transitions {trans.shape} do not fit {K} labels")
    if gold.shape != (T,):
        raise ValueError(f"crf_nll: gold length {gold.shape} != {T}")
    if gold.min() < 0 or gold.max() >= K:
        raise IndexError("crf_nll: gold label index out of range")
    logz, marg, expected = kernels.crf_forward_backward(em.value, trans.value)
    value = logz - crf_path_score(em.value, trans.value, gold)

    def backward(g):
        g = float(g)
        d_em = marg.copy()
        d_em[np.arange(T), gold] -= 1.0
        d_tr = expected.copy()
        d_tr[K, gold[0]] -= 1.0
        d_tr[gold[-1], K + 1] -= 1.0
        np.add.at(d_tr, (gold[:-1], gold[1:]), -1.0)
        _acc(em, g * d_em)
        _acc(trans, g * d_tr)

    return _result(np.asarray(value), (em, trans), backward)
