"""Numpy implementations of the decode/training hot kernels.

Mirrors the compiled backend in ``_ckernels.pyx``; both must produce
identical results within float64 roundoff.
"""

import numpy as np

BACKEND_NAME = "python"


def causal_attention(q, k, v):
    """Multi-head causal self-attention over a full sequence.

    q, k, v: (H, T, dh) arrays. Returns (ctx, probs) with ctx (H, T, dh)
    and probs (H, T, T); probs[h, t, j] is zero for j > t.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    n_heads, seq_len, head_dim = q.shape
    scale = 1.0 / np.sqrt(head_dim)
    scores = np.matmul(q, k.transpose(0, 2, 1)) * scale
    mask = np.triu(np.ones((seq_len, seq_len), dtype=bool), k=1)
    scores[:, mask] = -np.inf
    scores -= scores.max(axis=-1, keepdims=True)
    probs = np.exp(scores)
    probs /= probs.sum(axis=-1, keepdims=True)
    ctx = np.matmul(probs, v)
    return ctx, probs


def attention_step(q, k_cache, v_cache):
    """Single-position attention of query q (H, dh) over caches (H, T, dh)."""
    q = np.asarray(q, dtype=np.float64)
    k_cache = np.asarray(k_cache, dtype=np.float64)
    v_cache = np.asarray(v_cache, dtype=np.float64)
    head_dim = q.shape[-1]
    scale = 1.0 / np.sqrt(head_dim)
    scores = np.einsum("hd,htd->ht", q, k_cache) * scale
    scores -= scores.max(axis=-1, keepdims=True)
    probs = np.exp(scores)
    probs /= probs.sum(axis=-1, keepdims=True)
    return np.einsum("ht,htd->hd", probs, v_cache)


def softmax_cross_entropy(logits, gold):
    """Mean cross-entropy of gold labels under row-softmax of logits.

    logits: (N, V), gold: (N,) int. Returns (loss, dloss/dlogits) where the
    gradient already carries the 1/N batch-mean factor.
    """
    logits = np.asarray(logits, dtype=np.float64)
    gold = np.asarray(gold, dtype=np.int64)
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    z = exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(z)
    loss = -log_probs[np.arange(n), gold].mean()
    dlogits = exp / z
    dlogits[np.arange(n), gold] -= 1.0
    dlogits /= n
    return loss, dlogits
