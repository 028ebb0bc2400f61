"""Numpy reference kernels.

Used when the compiled extension is unavailable and as the comparison
baseline in ``benchmarks/``.  Signatures mirror ``_ckernels.pyx`` exactly.

LSTM gate layout along the last axis is ``[input, forget, output, candidate]``.
The CRF transition matrix is ``(K + 2, K + 2)`` with START at row ``K`` and END
at column ``K + 1``; the START column and END row are never read.
"""
from __future__ import annotations

import numpy as np

BACKEND = "python"


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def lstm_forward(xproj: np.ndarray, U: np.ndarray):
    """Run the recurrence over ``xproj`` of shape (L, B, 4H).

    ``xproj`` already holds ``x_t @ W + b``.  Returns hidden states (L, B, H),
    cell states (L, B, H) and activated gates (L, B, 4H).
    """
    L, B, G = xproj.shape
    H = G // 4
    hs = np.empty((L, B, H))
    cs = np.empty((L, B, H))
    acts = np.empty((L, B, G))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    for t in range(L):
        z = xproj[t] + h @ U
        a = acts[t]
        a[:, :3 * H] = _sigmoid(z[:, :3 * H])
        a[:, 3 * H:] = np.tanh(z[:, 3 * H:])
        c = a[:, H:2 * H] * c + a[:, :H] * a[:, 3 * H:]
        h = a[:, 2 * H:3 * H] * np.tanh(c)
        hs[t] = h
        cs[t] = c
    return hs, cs, acts


def lstm_backward(dhs: np.ndarray, U: np.ndarray, hs: np.ndarray, cs: np.ndarray, acts: np.ndarray):
    """Gradients w.r.t. the projected inputs (L, B, 4H) and U (H, 4H)."""
    L, B, H = hs.shape
    dxproj = np.empty((L, B, 4 * H))
    dU = np.zeros_like(U)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(L - 1, -1, -1):
        a = acts[t]
        i, f, o, g = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
        tc = np.tanh(cs[t])
        dh = dhs[t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        c_prev = cs[t - 1] if t > 0 else np.zeros((B, H))
        dz = dxproj[t]
        dz[:, :H] = dc * g * i * (1.0 - i)
        dz[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
        dz[:, 3 * H:] = dc * i * (1.0 - g * g)
        if t > 0:
            dU += hs[t - 1].T @ dz
        dh_next = dz @ U.T
        dc_next = dc * f
    return dxproj, dU


def _logsumexp_rows(m: np.ndarray, axis: int) -> np.ndarray:
    mx = m.max(axis=axis)
    return mx + np.log(np.exp(m - np.expand_dims(mx, axis)).sum(axis=axis))


def _lse(v: np.ndarray) -> float:
    mx = v.max()
    return float(mx + np.log(np.exp(v - mx).sum()))


def crf_log_partition(em: np.ndarray, trans: np.ndarray) -> float:
    T, K = em.shape
    inner = trans[:K, :K]
    alpha = trans[K, :K] + em[0]
    for t in range(1, T):
        alpha = _logsumexp_rows(alpha[:, None] + inner, 0) + em[t]
    return _lse(alpha + trans[:K, K + 1])


def crf_forward_backward(em: np.ndarray, trans: np.ndarray):
    """Log partition, per-token label marginals (T, K) and expected transition counts.

    The expected-count matrix has the transition matrix's shape; only the
    START row, END column and the inner K x K block are populated.
    """
    T, K = em.shape
    inner = trans[:K, :K]
    start = trans[K, :K]
    end = trans[:K, K + 1]
    alpha = np.empty((T, K))
    beta = np.empty((T, K))
    alpha[0] = start + em[0]
    for t in range(1, T):
        alpha[t] = _logsumexp_rows(alpha[t - 1][:, None] + inner, 0) + em[t]
    logz = _lse(alpha[T - 1] + end)
    beta[T - 1] = end
    for t in range(T - 2, -1, -1):
        beta[t] = _logsumexp_rows(inner + (em[t + 1] + beta[t + 1])[None, :], 1)
    marg = np.exp(alpha + beta - logz)
    expected = np.zeros_like(trans)
    expected[K, :K] = marg[0]
    expected[:K, K + 1] = marg[T - 1]
    block = expected[:K, :K]
    for t in range(1, T):
        block += np.exp(alpha[t - 1][:, None] + inner + (em[t] + beta[t])[None, :] - logz)
    return logz, marg, expected


def viterbi(em: np.ndarray, trans: np.ndarray):
    """Best path (int64 array) and its score; ties go to the lower label index."""
    T, K = em.shape
    inner = trans[:K, :K]
    delta = trans[K, :K] + em[0]
    back = np.zeros((T, K), dtype=np.int64)
    cols = np.arange(K)
    for t in range(1, T):
        scores = delta[:, None] + inner
        bp = scores.argmax(axis=0)
        back[t] = bp
        delta = scores[bp, cols] + em[t]
    final = delta + trans[:K, K + 1]
    last = int(final.argmax())
    path = np.empty(T, dtype=np.int64)
    path[T - 1] = last
    for t in range(T - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path, float(final[last])
