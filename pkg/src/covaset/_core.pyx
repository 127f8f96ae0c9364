# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernel core.

Mirrors ``covaset._kernels_np`` (see that module for the kernel contracts).
The loops here fuse affine+ReLU, pooling and the gradient scatter, avoiding
the temporaries the numpy path allocates; at the small per-cell widths this
tool runs at, that is where the time goes. ``benchmarks/bench_kernels.py``
compares the two backends.
"""

import numpy as np

from libc.math cimport cos, sin, sqrt


def rff_map(A, P):
    cdef const double[:, ::1] Av = np.ascontiguousarray(A, dtype=np.float64)
    cdef const double[:, ::1] Pv = np.ascontiguousarray(P, dtype=np.float64)
    cdef Py_ssize_t m = Av.shape[0], n = Av.shape[1], K = Pv.shape[1]
    out = np.empty((m, 2 * K), dtype=np.float64)
    row_buf = np.empty(K, dtype=np.float64)
    cdef double[:, ::1] O = out
    cdef double[::1] row = row_buf
    cdef double scale = sqrt(2.0 / K)
    cdef Py_ssize_t q, j, p
    cdef double a
    for q in range(m):
        for j in range(K):
            row[j] = 0.0
        for p in range(n):
            a = Av[q, p]
            for j in range(K):
                row[j] += a * Pv[p, j]
        for j in range(K):
            O[q, j] = scale * cos(row[j])
            O[q, K + j] = scale * sin(row[j])
    return out


cdef void _affine_relu(const double[:, ::1] src, const double[:, ::1] W,
                       const double[::1] b, double[:, ::1] dst) noexcept nogil:
    # dst = relu(src @ W + b); src (r, fi), W (fi, fo), dst (r, fo).
    # ikj loop order keeps the inner accumulation unit-stride.
    cdef Py_ssize_t r = src.shape[0], fi = src.shape[1], fo = W.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double a
    for i in range(r):
        for j in range(fo):
            dst[i, j] = b[j]
        for k in range(fi):
            a = src[i, k]
            for j in range(fo):
                dst[i, j] += a * W[k, j]
        for j in range(fo):
            if dst[i, j] < 0.0:
                dst[i, j] = 0.0


def forward_batch(X, block_ws, block_bs, head_w, head_b, out_w, out_b):
    cdef const double[:, :, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t B = Xv.shape[0], s = Xv.shape[1]
    cdef Py_ssize_t nblocks = len(block_ws)

    block_acts = []
    cdef const double[:, :, ::1] cur = Xv
    cdef double[:, :, ::1] nxt
    cdef const double[:, ::1] Wv
    cdef const double[::1] bv
    cdef Py_ssize_t layer, b_i
    for layer in range(nblocks):
        Wv = block_ws[layer]
        bv = block_bs[layer]
        out_act = np.empty((B, s, Wv.shape[1]), dtype=np.float64)
        nxt = out_act
        for b_i in range(B):
            _affine_relu(cur[b_i], Wv, bv, nxt[b_i])
        block_acts.append(out_act)
        cur = nxt

    cdef Py_ssize_t w_last = cur.shape[2]
    pooled_arr = np.empty((B, w_last), dtype=np.float64)
    amax_arr = np.empty((B, w_last), dtype=np.int64)
    cdef double[:, ::1] pooled = pooled_arr
    cdef long long[:, ::1] amax = amax_arr
    cdef Py_ssize_t f, c
    cdef double best
    cdef Py_ssize_t best_i
    for b_i in range(B):
        for f in range(w_last):
            best = cur[b_i, 0, f]
            best_i = 0
            for c in range(1, s):
                if cur[b_i, c, f] > best:
                    best = cur[b_i, c, f]
                    best_i = c
            pooled[b_i, f] = best
            amax[b_i, f] = best_i

    cdef const double[:, ::1] hw = head_w
    cdef const double[::1] hb = head_b
    cdef Py_ssize_t e = hw.shape[1]
    emb_arr = np.empty((B, e), dtype=np.float64)
    cdef double[:, ::1] emb = emb_arr
    for b_i in range(B):
        _affine_relu(pooled[b_i:b_i + 1], hw, hb, emb[b_i:b_i + 1])

    cdef const double[::1] ow = out_w
    cdef double ob = out_b
    logits_arr = np.empty(B, dtype=np.float64)
    cdef double[::1] logits = logits_arr
    cdef double acc
    cdef Py_ssize_t j
    for b_i in range(B):
        acc = ob
        for j in range(e):
            acc += emb[b_i, j] * ow[j]
        logits[b_i] = acc

    return logits_arr, emb_arr, (block_acts, pooled_arr, amax_arr, emb_arr)


def backward_batch(X, block_ws, block_bs, head_w, head_b, out_w, out_b,
                   trace, dlogit, dembed):
    block_acts, pooled_arr, amax_arr, emb_arr = trace
    cdef const double[:, :, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[:, ::1] pooled = pooled_arr
    cdef const long long[:, ::1] amax = amax_arr
    cdef const double[:, ::1] emb = emb_arr
    cdef const double[::1] dlog = np.ascontiguousarray(dlogit, dtype=np.float64)
    cdef const double[:, ::1] hw = head_w
    cdef const double[::1] ow = out_w

    cdef Py_ssize_t B = Xv.shape[0], s = Xv.shape[1]
    cdef Py_ssize_t e = hw.shape[1], w_last = hw.shape[0]
    cdef Py_ssize_t nblocks = len(block_ws)
    cdef Py_ssize_t b_i, i, j, f, c, layer

    d_out_w_arr = np.zeros(e, dtype=np.float64)
    cdef double[::1] d_out_w = d_out_w_arr
    cdef double d_out_b = 0.0
    demb_arr = np.empty((B, e), dtype=np.float64)
    cdef double[:, ::1] demb = demb_arr
    cdef const double[:, ::1] dembv
    cdef bint has_demb = dembed is not None
    if has_demb:
        dembv = np.ascontiguousarray(dembed, dtype=np.float64)
    for b_i in range(B):
        d_out_b += dlog[b_i]
        for j in range(e):
            d_out_w[j] += emb[b_i, j] * dlog[b_i]
            demb[b_i, j] = dlog[b_i] * ow[j]
            if has_demb:
                demb[b_i, j] += dembv[b_i, j]
            if emb[b_i, j] <= 0.0:
                demb[b_i, j] = 0.0  # now holds dhead_pre

    d_head_w_arr = np.zeros((w_last, e), dtype=np.float64)
    d_head_b_arr = np.zeros(e, dtype=np.float64)
    cdef double[:, ::1] d_head_w = d_head_w_arr
    cdef double[::1] d_head_b = d_head_b_arr
    grad_last_arr = np.zeros((B, s, w_last), dtype=np.float64)
    cdef double[:, :, ::1] grad = grad_last_arr
    cdef double dp
    for b_i in range(B):
        for j in range(e):
            d_head_b[j] += demb[b_i, j]
            for f in range(w_last):
                d_head_w[f, j] += pooled[b_i, f] * demb[b_i, j]
        for f in range(w_last):
            dp = 0.0
            for j in range(e):
                dp += demb[b_i, j] * hw[f, j]
            grad[b_i, amax[b_i, f], f] = dp

    d_ws = [np.zeros_like(W) for W in block_ws]
    d_bs = [np.zeros_like(b) for b in block_bs]
    cdef const double[:, :, ::1] act, prev
    cdef double[:, :, ::1] dprev
    cdef double[:, ::1] dW
    cdef double[::1] db
    cdef double[:, ::1] Wv
    cdef Py_ssize_t fo, fi
    cdef double g
    cdef bint not_first
    for layer in range(nblocks - 1, -1, -1):
        act = block_acts[layer]
        fo = act.shape[2]
        dW = d_ws[layer]
        db = d_bs[layer]
        not_first = layer > 0
        if not_first:
            prev = block_acts[layer - 1]
        else:
            prev = Xv
        fi = prev.shape[2]
        Wv = block_ws[layer]
        dprev_arr = np.zeros((B, s, fi), dtype=np.float64)
        dprev = dprev_arr
        for b_i in range(B):
            for c in range(s):
                for j in range(fo):
                    if act[b_i, c, j] <= 0.0:
                        continue
                    g = grad[b_i, c, j]
                    if g == 0.0:
                        continue
                    db[j] += g
                    for i in range(fi):
                        dW[i, j] += prev[b_i, c, i] * g
                    if not_first:
                        for i in range(fi):
                            dprev[b_i, c, i] += Wv[i, j] * g
        grad = dprev
    return d_ws, d_bs, d_head_w_arr, d_head_b_arr, d_out_w_arr, d_out_b
