"""Pure-numpy implementations of the hot kernels.

This is the fallback backend; ``covaset._core`` (Cython) implements the same
three functions with identical semantics. Within one backend every function
is a deterministic, bit-reproducible map of its inputs. Across backends the
results agree to floating-point reassociation error (BLAS accumulates dot
products in a different order than the scalar loops).

Kernel contracts
----------------
rff_map(A, P)
    A: (m, n) cells x markers, P: (n, K) projection. Returns (m, 2K) with
    row q = sqrt(2/K) * [cos((A@P)[q]), sin((A@P)[q])].

forward_batch(X, block_ws, block_bs, head_w, head_b, out_w, out_b)
    X: (B, s, n) stack of fixed-size cell sets. Per-cell blocks are
    affine+ReLU, then a column-wise max pool over the s cells, then an
    affine+ReLU head producing the embedding and an affine output producing
    one logit per instance. Returns (logits (B,), embeds (B, e), trace).

backward_batch(..., trace, dlogit, dembed)
    Exact reverse-mode gradients of sum_b dlogit[b]*logit[b] +
    sum_b dembed[b].emb[b] with respect to every parameter. Max pool routes
    gradient only to the argmax cell (first index on ties); ReLU passes
    gradient where the activation is strictly positive.
"""

from __future__ import annotations

import numpy as np


def rff_map(A: np.ndarray, P: np.ndarray) -> np.ndarray:
    K = P.shape[1]
    proj = A @ P
    scale = np.sqrt(2.0 / K)
    out = np.empty((A.shape[0], 2 * K), dtype=np.float64)
    np.cos(proj, out=out[:, :K])
    np.sin(proj, out=out[:, K:])
    out *= scale
    return out


def forward_batch(X, block_ws, block_bs, head_w, head_b, out_w, out_b):
    act = X
    block_acts = []
    for W, b in zip(block_ws, block_bs):
        act = np.maximum(act @ W + b, 0.0)
        block_acts.append(act)
    # argmax keeps the first index on ties, which pins gradient routing
    amax = np.argmax(act, axis=1)
    pooled = np.take_along_axis(act, amax[:, None, :], axis=1)[:, 0, :]
    emb = np.maximum(pooled @ head_w + head_b, 0.0)
    logits = emb @ out_w + out_b
    return logits, emb, (block_acts, pooled, amax, emb)


def backward_batch(X, block_ws, block_bs, head_w, head_b, out_w, out_b,
                   trace, dlogit, dembed):
    block_acts, pooled, amax, emb = trace

    d_out_w = emb.T @ dlogit
    d_out_b = float(dlogit.sum())

    demb = dlogit[:, None] * out_w[None, :]
    if dembed is not None:
        demb = demb + dembed
    dhead_pre = np.where(emb > 0.0, demb, 0.0)
    d_head_w = pooled.T @ dhead_pre
    d_head_b = dhead_pre.sum(axis=0)
    dpooled = dhead_pre @ head_w.T

    # scatter pooled gradient back to the argmax cells
    grad = np.zeros_like(block_acts[-1])
    np.put_along_axis(grad, amax[:, None, :], dpooled[:, None, :], axis=1)

    d_ws = [None] * len(block_ws)
    d_bs = [None] * len(block_bs)
    for layer in reversed(range(len(block_ws))):
        act = block_acts[layer]
        prev = block_acts[layer - 1] if layer > 0 else X
        dpre = np.where(act > 0.0, grad, 0.0)
        d_ws[layer] = np.einsum("bsi,bsj->ij", prev, dpre)
        d_bs[layer] = dpre.sum(axis=(0, 1))
        if layer > 0:
            grad = dpre @ block_ws[layer].T
    return d_ws, d_bs, d_head_w, d_head_b, d_out_w, d_out_b
