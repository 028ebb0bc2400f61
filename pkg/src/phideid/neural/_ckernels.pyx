# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels; same signatures and layouts as ``_pykernels``."""
import numpy as np

from libc.math cimport exp, log, tanh
from scipy.linalg.cython_blas cimport dgemm, dgemv, dger

BACKEND = "cython"


cdef inline double _sig(double x) noexcept nogil:
    return 1.0 / (1.0 + exp(-x))


cdef inline void _gemm(char* ta, char* tb, int m, int n, int k, double* a, int lda,
                       double* b, int ldb, double beta, double* c, int ldc) noexcept nogil:
    cdef double one = 1.0
    dgemm(ta, tb, &m, &n, &k, &one, a, &lda, b, &ldb, &beta, c, &ldc)


cdef inline void _gemv(char* ta, int m, int n, double* a, int lda, double* x, double beta,
                       double* y) noexcept nogil:
    cdef double one = 1.0
    cdef int inc = 1
    dgemv(ta, &m, &n, &one, a, &lda, x, &inc, &beta, y, &inc)


cdef inline void _ger(int m, int n, double* x, double* y, double* a, int lda) noexcept nogil:
    cdef double one = 1.0
    cdef int inc = 1
    dger(&m, &n, &one, x, &inc, y, &inc, a, &lda)


# BLAS is column-major: a row-major (R, C) array is read as a (C, R) matrix,
# so row-major products are issued with operands swapped.  Batch size 1 uses
# level-2 routines, which are much cheaper than a one-column gemm.


def lstm_forward(xproj, U):
    xproj = np.ascontiguousarray(xproj, dtype=np.float64)
    U = np.ascontiguousarray(U, dtype=np.float64)
    cdef int L = xproj.shape[0], B = xproj.shape[1], G = xproj.shape[2]
    cdef int H = G // 4
    hs_a = np.empty((L, B, H))
    cs_a = np.empty((L, B, H))
    acts_a = np.array(xproj, copy=True)
    cdef double[:, :, ::1] hs = hs_a
    cdef double[:, :, ::1] cs = cs_a
    cdef double[:, :, ::1] acts = acts_a
    cdef double[:, ::1] Uv = U
    cdef int t, b, j
    cdef double* a
    cdef double* c
    cdef double* h
    cdef double* cp
    with nogil:
        for t in range(L):
            if t > 0 and B == 1:
                _gemv(b"N", G, H, &Uv[0, 0], G, &hs[t - 1, 0, 0], 1.0, &acts[t, 0, 0])
            elif t > 0:
                # acts[t] (B, 4H) += hs[t-1] (B, H) @ U (H, 4H)
                _gemm(b"N", b"N", G, B, H, &Uv[0, 0], G, &hs[t - 1, 0, 0], H, 1.0, &acts[t, 0, 0], G)
            for b in range(B):
                # flat pointer loops so the compiler can use vector exp/tanh
                a = &acts[t, b, 0]
                c = &cs[t, b, 0]
                h = &hs[t, b, 0]
                for j in range(3 * H):
                    a[j] = 1.0 / (1.0 + exp(-a[j]))
                for j in range(3 * H, G):
                    a[j] = tanh(a[j])
                if t > 0:
                    cp = &cs[t - 1, b, 0]
                    for j in range(H):
                        c[j] = a[H + j] * cp[j] + a[j] * a[3 * H + j]
                else:
                    for j in range(H):
                        c[j] = a[j] * a[3 * H + j]
                for j in range(H):
                    h[j] = a[2 * H + j] * tanh(c[j])
    return hs_a, cs_a, acts_a


def lstm_backward(dhs, U, hs, cs, acts):
    dhs = np.ascontiguousarray(dhs, dtype=np.float64)
    U = np.ascontiguousarray(U, dtype=np.float64)
    cdef double[:, :, ::1] dh_in = dhs
    cdef double[:, :, ::1] hv = np.ascontiguousarray(hs)
    cdef double[:, :, ::1] cv = np.ascontiguousarray(cs)
    cdef double[:, :, ::1] av = np.ascontiguousarray(acts)
    cdef double[:, ::1] Uv = U
    cdef int L = hv.shape[0], B = hv.shape[1], H = hv.shape[2]
    cdef int G = 4 * H
    dx_a = np.empty((L, B, G))
    dU_a = np.zeros((H, G))
    dhn_a = np.zeros((B, H))
    dcn_a = np.zeros((B, H))
    cdef double[:, :, ::1] dx = dx_a
    cdef double[:, ::1] dU = dU_a
    cdef double[:, ::1] dhn = dhn_a
    cdef double[:, ::1] dcn = dcn_a
    tc_a = np.empty(H)
    cdef double[::1] tcv = tc_a
    cdef int t, b, j
    cdef double i, f, o, g, tc, dh, dc
    cdef double* a
    cdef double* d
    cdef double* c
    cdef double* tcp = &tcv[0]
    with nogil:
        for t in range(L - 1, -1, -1):
            for b in range(B):
                a = &av[t, b, 0]
                d = &dx[t, b, 0]
                c = &cv[t, b, 0]
                for j in range(H):
                    tcp[j] = tanh(c[j])
                for j in range(H):
                    i = a[j]
                    f = a[H + j]
                    o = a[2 * H + j]
                    g = a[3 * H + j]
                    tc = tcp[j]
                    dh = dh_in[t, b, j] + dhn[b, j]
                    dc = dh * o * (1.0 - tc * tc) + dcn[b, j]
                    d[j] = dc * g * i * (1.0 - i)
                    d[H + j] = (dc * cv[t - 1, b, j] * f * (1.0 - f)) if t > 0 else 0.0
                    d[2 * H + j] = dh * tc * o * (1.0 - o)
                    d[3 * H + j] = dc * i * (1.0 - g * g)
                    dcn[b, j] = dc * f
            if B == 1:
                if t > 0:
                    _ger(G, H, &dx[t, 0, 0], &hv[t - 1, 0, 0], &dU[0, 0], G)
                _gemv(b"T", G, H, &Uv[0, 0], G, &dx[t, 0, 0], 0.0, &dhn[0, 0])
                continue
            if t > 0:
                # dU (H, 4H) += hs[t-1].T (H, B) @ dz (B, 4H)
                _gemm(b"N", b"T", G, H, B, &dx[t, 0, 0], G, &hv[t - 1, 0, 0], H, 1.0, &dU[0, 0], G)
            # dh_next (B, H) = dz (B, 4H) @ U.T (4H, H)
            _gemm(b"T", b"N", H, B, G, &Uv[0, 0], G, &dx[t, 0, 0], G, 0.0, &dhn[0, 0], H)
    return dx_a, dU_a


cdef inline double _lse_col(double[:, ::1] m, int K, double* prev, int j) noexcept nogil:
    # log sum_i exp(prev[i] + m[i, j])
    cdef int i
    cdef double mx = prev[0] + m[0, j]
    cdef double v, s = 0.0
    for i in range(1, K):
        v = prev[i] + m[i, j]
        if v > mx:
            mx = v
    for i in range(K):
        s += exp(prev[i] + m[i, j] - mx)
    return mx + log(s)


cdef double _forward(double[:, ::1] em, double[:, ::1] tr, double[:, ::1] alpha) noexcept nogil:
    cdef int T = em.shape[0], K = em.shape[1]
    cdef int t, j
    cdef double mx, s, v
    for j in range(K):
        alpha[0, j] = tr[K, j] + em[0, j]
    for t in range(1, T):
        for j in range(K):
            alpha[t, j] = _lse_col(tr, K, &alpha[t - 1, 0], j) + em[t, j]
    mx = alpha[T - 1, 0] + tr[0, K + 1]
    for j in range(1, K):
        v = alpha[T - 1, j] + tr[j, K + 1]
        if v > mx:
            mx = v
    s = 0.0
    for j in range(K):
        s += exp(alpha[T - 1, j] + tr[j, K + 1] - mx)
    return mx + log(s)


def crf_log_partition(em, trans):
    em = np.ascontiguousarray(em, dtype=np.float64)
    trans = np.ascontiguousarray(trans, dtype=np.float64)
    cdef double[:, ::1] emv = em
    cdef double[:, ::1] trv = trans
    alpha = np.empty_like(em)
    cdef double[:, ::1] av = alpha
    cdef double z
    with nogil:
        z = _forward(emv, trv, av)
    return z


def crf_forward_backward(em, trans):
    em = np.ascontiguousarray(em, dtype=np.float64)
    trans = np.ascontiguousarray(trans, dtype=np.float64)
    cdef double[:, ::1] emv = em
    cdef double[:, ::1] tr = trans
    cdef int T = emv.shape[0], K = emv.shape[1]
    alpha_a = np.empty((T, K))
    beta_a = np.empty((T, K))
    marg_a = np.empty((T, K))
    exp_a = np.zeros_like(trans)
    cdef double[:, ::1] alpha = alpha_a
    cdef double[:, ::1] beta = beta_a
    cdef double[:, ::1] marg = marg_a
    cdef double[:, ::1] ex = exp_a
    cdef int t, i, j
    cdef double logz, mx, s, v
    with nogil:
        logz = _forward(emv, tr, alpha)
        for i in range(K):
            beta[T - 1, i] = tr[i, K + 1]
        for t in range(T - 2, -1, -1):
            for i in range(K):
                mx = tr[i, 0] + emv[t + 1, 0] + beta[t + 1, 0]
                for j in range(1, K):
                    v = tr[i, j] + emv[t + 1, j] + beta[t + 1, j]
                    if v > mx:
                        mx = v
                s = 0.0
                for j in range(K):
                    s += exp(tr[i, j] + emv[t + 1, j] + beta[t + 1, j] - mx)
                beta[t, i] = mx + log(s)
        for t in range(T):
            for j in range(K):
                marg[t, j] = exp(alpha[t, j] + beta[t, j] - logz)
        for j in range(K):
            ex[K, j] = marg[0, j]
            ex[j, K + 1] = marg[T - 1, j]
        for t in range(1, T):
            for i in range(K):
                for j in range(K):
                    ex[i, j] += exp(alpha[t - 1, i] + tr[i, j] + (emv[t, j] + beta[t, j]) - logz)
    return logz, marg_a, exp_a


def viterbi(em, trans):
    em = np.ascontiguousarray(em, dtype=np.float64)
    trans = np.ascontiguousarray(trans, dtype=np.float64)
    cdef double[:, ::1] emv = em
    cdef double[:, ::1] tr = trans
    cdef int T = emv.shape[0], K = emv.shape[1]
    back_a = np.zeros((T, K), dtype=np.int64)
    path_a = np.empty(T, dtype=np.int64)
    cdef long long[:, ::1] back = back_a
    cdef long long[::1] path = path_a
    cdef double[::1] delta = np.empty(K)
    cdef double[::1] nxt = np.empty(K)
    cdef int t, i, j, arg, last
    cdef double best, v
    with nogil:
        for j in range(K):
            delta[j] = tr[K, j] + emv[0, j]
        for t in range(1, T):
            for j in range(K):
                best = delta[0] + tr[0, j]
                arg = 0
                for i in range(1, K):
                    v = delta[i] + tr[i, j]
                    if v > best:
                        best = v
                        arg = i
                back[t, j] = arg
                nxt[j] = best + emv[t, j]
            for j in range(K):
                delta[j] = nxt[j]
        best = delta[0] + tr[0, K + 1]
        last = 0
        for j in range(1, K):
            v = delta[j] + tr[j, K + 1]
            if v > best:
                best = v
                last = j
        path[T - 1] = last
        for t in range(T - 1, 0, -1):
            path[t - 1] = back[t, path[t]]
    return path_a, best
