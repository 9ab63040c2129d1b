# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled decode/training hot kernels.

Same contracts as ``_pykernels``; selected at import in ``__init__``.
"""

import numpy as np

from libc.math cimport exp, log, sqrt, INFINITY

BACKEND_NAME = "cython"


def causal_attention(q, k, v):
    """Multi-head causal self-attention over a full sequence.

    q, k, v: (H, T, dh) arrays. Returns (ctx, probs) with ctx (H, T, dh)
    and probs (H, T, T); probs[h, t, j] is zero for j > t.
    """
    cdef double[:, :, ::1] qv = np.ascontiguousarray(q, dtype=np.float64)
    cdef double[:, :, ::1] kv = np.ascontiguousarray(k, dtype=np.float64)
    cdef double[:, :, ::1] vv = np.ascontiguousarray(v, dtype=np.float64)
    cdef Py_ssize_t n_heads = qv.shape[0]
    cdef Py_ssize_t seq_len = qv.shape[1]
    cdef Py_ssize_t head_dim = qv.shape[2]
    ctx_arr = np.zeros((n_heads, seq_len, head_dim), dtype=np.float64)
    probs_arr = np.zeros((n_heads, seq_len, seq_len), dtype=np.float64)
    cdef double[:, :, ::1] ctx = ctx_arr
    cdef double[:, :, ::1] probs = probs_arr
    cdef double scale = 1.0 / sqrt(<double> head_dim)
    cdef Py_ssize_t h, t, j, d
    cdef double s, m, z, p
    for h in range(n_heads):
        for t in range(seq_len):
            m = -INFINITY
            for j in range(t + 1):
                s = 0.0
                for d in range(head_dim):
                    s += qv[h, t, d] * kv[h, j, d]
                s *= scale
                probs[h, t, j] = s
                if s > m:
                    m = s
            z = 0.0
            for j in range(t + 1):
                p = exp(probs[h, t, j] - m)
                probs[h, t, j] = p
                z += p
            for j in range(t + 1):
                p = probs[h, t, j] / z
                probs[h, t, j] = p
                for d in range(head_dim):
                    ctx[h, t, d] += p * vv[h, j, d]
    return ctx_arr, probs_arr


def attention_step(q, k_cache, v_cache):
    """Single-position attention of query q (H, dh) over caches (H, T, dh)."""
    cdef double[:, ::1] qv = np.ascontiguousarray(q, dtype=np.float64)
    cdef double[:, :, ::1] kv = np.ascontiguousarray(k_cache, dtype=np.float64)
    cdef double[:, :, ::1] vv = np.ascontiguousarray(v_cache, dtype=np.float64)
    cdef Py_ssize_t n_heads = qv.shape[0]
    cdef Py_ssize_t cache_len = kv.shape[1]
    cdef Py_ssize_t head_dim = qv.shape[1]
    out_arr = np.zeros((n_heads, head_dim), dtype=np.float64)
    scores_arr = np.empty(cache_len, dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] scores = scores_arr
    cdef double scale = 1.0 / sqrt(<double> head_dim)
    cdef Py_ssize_t h, j, d
    cdef double s, m, z, p
    for h in range(n_heads):
        m = -INFINITY
        for j in range(cache_len):
            s = 0.0
            for d in range(head_dim):
                s += qv[h, d] * kv[h, j, d]
            s *= scale
            scores[j] = s
            if s > m:
                m = s
        z = 0.0
        for j in range(cache_len):
            p = exp(scores[j] - m)
            scores[j] = p
            z += p
        for j in range(cache_len):
            p = scores[j] / z
            for d in range(head_dim):
                out[h, d] += p * vv[h, j, d]
    return out_arr


def softmax_cross_entropy(logits, gold):
    """Mean cross-entropy of gold labels under row-softmax of logits.

    logits: (N, V), gold: (N,) int. Returns (loss, dloss/dlogits) where the
    gradient already carries the 1/N batch-mean factor.
    """
    cdef double[:, ::1] lv = np.ascontiguousarray(logits, dtype=np.float64)
    cdef long[::1] gv = np.ascontiguousarray(gold, dtype=np.int64)
    cdef Py_ssize_t n = lv.shape[0]
    cdef Py_ssize_t vocab = lv.shape[1]
    dlogits_arr = np.empty((n, vocab), dtype=np.float64)
    cdef double[:, ::1] dl = dlogits_arr
    cdef double loss = 0.0
    cdef double inv_n = 1.0 / n
    cdef Py_ssize_t i, j
    cdef double m, z, shifted
    for i in range(n):
        m = lv[i, 0]
        for j in range(1, vocab):
            if lv[i, j] > m:
                m = lv[i, j]
        z = 0.0
        for j in range(vocab):
            shifted = exp(lv[i, j] - m)
            dl[i, j] = shifted
            z += shifted
        loss -= (lv[i, gv[i]] - m - log(z)) * inv_n
        for j in range(vocab):
            dl[i, j] = dl[i, j] / z * inv_n
        dl[i, gv[i]] -= inv_n
    return loss, dlogits_arr
