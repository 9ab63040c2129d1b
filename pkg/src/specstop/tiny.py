"""Desk-scale trainable models: a small transformer target and a
hidden-state-reuse draft cell.

Both are plain-numpy with hand-written backward passes so gradient checks
stay exact. The transformer is deliberately small (2 layers, 64 dims,
4 heads, 256 context) so CPU training finishes in minutes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arrayio import load_arrays, save_arrays
from .heads import ConfigurationError, DraftHead, SignalPrediction, head_project
from .kernels import attention_step, causal_attention, softmax_cross_entropy

LN_EPS = 1e-5


@dataclass(frozen=True)
class TinyConfig:
    vocab_size: int = 64
    hidden_dim: int = 64
    n_layers: int = 2
    n_heads: int = 4
    context: int = 256
    mlp_factor: int = 4

    def __post_init__(self):
        if self.vocab_size > 512:
            raise ConfigurationError("vocab_size beyond desk scale (max 512)")
        if self.hidden_dim % self.n_heads != 0:
            raise ConfigurationError("hidden_dim must divide evenly into heads")


def _layernorm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return g * xhat + b, (xhat, inv)


def _layernorm_backward(dy, g, cache):
    xhat, inv = cache
    dg = (dy * xhat).sum(axis=0)
    db = dy.sum(axis=0)
    dxhat = dy * g
    dim = xhat.shape[-1]
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    _ = dim
    return dx, dg, db


class TinyTransformer:
    """Pre-norm causal transformer returning per-position logits and hidden states."""

    def __init__(self, config: TinyConfig, seed: int = 0):
        self.config = config
        self.vocab_size = config.vocab_size
        self.hidden_dim = config.hidden_dim
        rng = np.random.default_rng(seed)
        c = config
        f = c.hidden_dim * c.mlp_factor
        p: dict[str, np.ndarray] = {
            "tok_emb": rng.normal(0, 0.02, (c.vocab_size, c.hidden_dim)),
            "pos_emb": rng.normal(0, 0.02, (c.context, c.hidden_dim)),
            "lnf.g": np.ones(c.hidden_dim),
            "lnf.b": np.zeros(c.hidden_dim),
            "unembed": rng.normal(0, 0.02, (c.hidden_dim, c.vocab_size)),
        }
        for i in range(c.n_layers):
            p[f"l{i}.ln1.g"] = np.ones(c.hidden_dim)
            p[f"l{i}.ln1.b"] = np.zeros(c.hidden_dim)
            p[f"l{i}.wq"] = rng.normal(0, 0.02, (c.hidden_dim, c.hidden_dim))
            p[f"l{i}.wk"] = rng.normal(0, 0.02, (c.hidden_dim, c.hidden_dim))
            p[f"l{i}.wv"] = rng.normal(0, 0.02, (c.hidden_dim, c.hidden_dim))
            p[f"l{i}.wo"] = rng.normal(0, 0.02, (c.hidden_dim, c.hidden_dim))
            p[f"l{i}.ln2.g"] = np.ones(c.hidden_dim)
            p[f"l{i}.ln2.b"] = np.zeros(c.hidden_dim)
            p[f"l{i}.w1"] = rng.normal(0, 0.02, (c.hidden_dim, f))
            p[f"l{i}.b1"] = np.zeros(f)
            p[f"l{i}.w2"] = rng.normal(0, 0.02, (f, c.hidden_dim))
            p[f"l{i}.b2"] = np.zeros(c.hidden_dim)
        self.params = p

    # -- full-sequence forward/backward (training path) --------------------

    def _split_heads(self, x):
        t = x.shape[0]
        c = self.config
        return x.reshape(t, c.n_heads, c.hidden_dim // c.n_heads).transpose(1, 0, 2)

    def _merge_heads(self, x):
        h, t, dh = x.shape
        return x.transpose(1, 0, 2).reshape(t, h * dh)

    def forward(self, tokens, want_cache: bool = False):
        tokens = np.asarray(tokens, dtype=np.int64)
        t = tokens.shape[0]
        if t == 0:
            raise ValueError("context must be non-empty")
        if t > self.config.context:
            raise ConfigurationError(f"context length {t} exceeds {self.config.context}")
        p = self.params
        x = p["tok_emb"][tokens] + p["pos_emb"][:t]
        cache: dict = {"tokens": tokens, "x_in": []}
        for i in range(self.config.n_layers):
            a, ln1c = _layernorm(x, p[f"l{i}.ln1.g"], p[f"l{i}.ln1.b"])
            q = self._split_heads(a @ p[f"l{i}.wq"])
            k = self._split_heads(a @ p[f"l{i}.wk"])
            v = self._split_heads(a @ p[f"l{i}.wv"])
            ctx, probs = causal_attention(q, k, v)
            ctx_m = self._merge_heads(ctx)
            x_attn = x + ctx_m @ p[f"l{i}.wo"]
            m, ln2c = _layernorm(x_attn, p[f"l{i}.ln2.g"], p[f"l{i}.ln2.b"])
            pre = m @ p[f"l{i}.w1"] + p[f"l{i}.b1"]
            act = np.maximum(pre, 0.0)
            x = x_attn + act @ p[f"l{i}.w2"] + p[f"l{i}.b2"]
            if want_cache:
                cache["x_in"].append((a, ln1c, q, k, v, probs, ctx_m, x_attn, m, ln2c, pre, act))
        hidden, lnfc = _layernorm(x, p["lnf.g"], p["lnf.b"])
        logits = hidden @ p["unembed"]
        if want_cache:
            cache["hidden"] = hidden
            cache["lnfc"] = lnfc
            return logits, hidden, cache
        return logits, hidden

    def backward(self, cache, dlogits, dhidden_extra=None) -> dict[str, np.ndarray]:
        p = self.params
        tokens = cache["tokens"]
        t = tokens.shape[0]
        grads = {name: np.zeros_like(arr) for name, arr in p.items()}
        hidden = cache["hidden"]
        grads["unembed"] = hidden.T @ dlogits
        dhidden = dlogits @ p["unembed"].T
        if dhidden_extra is not None:
            dhidden = dhidden + dhidden_extra
        dx, dg, db = _layernorm_backward(dhidden, p["lnf.g"], cache["lnfc"])
        grads["lnf.g"] = dg
        grads["lnf.b"] = db
        scale = 1.0 / np.sqrt(self.config.hidden_dim // self.config.n_heads)
        for i in reversed(range(self.config.n_layers)):
            a, ln1c, q, k, v, probs, ctx_m, x_attn, m, ln2c, pre, act = cache["x_in"][i]
            # mlp
            dact = dx @ p[f"l{i}.w2"].T
            grads[f"l{i}.w2"] = act.T @ dx
            grads[f"l{i}.b2"] = dx.sum(axis=0)
            dpre = dact * (pre > 0.0)
            grads[f"l{i}.w1"] = m.T @ dpre
            grads[f"l{i}.b1"] = dpre.sum(axis=0)
            dm = dpre @ p[f"l{i}.w1"].T
            dx_attn, dg2, db2 = _layernorm_backward(dm, p[f"l{i}.ln2.g"], ln2c)
            grads[f"l{i}.ln2.g"] = dg2
            grads[f"l{i}.ln2.b"] = db2
            dx_attn = dx_attn + dx
            # attention
            dctx_m = dx_attn @ p[f"l{i}.wo"].T
            grads[f"l{i}.wo"] = ctx_m.T @ dx_attn
            dctx = self._split_heads(dctx_m)
            dprobs = np.matmul(dctx, v.transpose(0, 2, 1))
            dv = np.matmul(probs.transpose(0, 2, 1), dctx)
            dscores = probs * (dprobs - np.sum(dprobs * probs, axis=-1, keepdims=True))
            dq = np.matmul(dscores, k) * scale
            dk = np.matmul(dscores.transpose(0, 2, 1), q) * scale
            da = (
                self._merge_heads(dq) @ p[f"l{i}.wq"].T
                + self._merge_heads(dk) @ p[f"l{i}.wk"].T
                + self._merge_heads(dv) @ p[f"l{i}.wv"].T
            )
            grads[f"l{i}.wq"] = a.T @ self._merge_heads(dq)
            grads[f"l{i}.wk"] = a.T @ self._merge_heads(dk)
            grads[f"l{i}.wv"] = a.T @ self._merge_heads(dv)
            dxp, dg1, db1 = _layernorm_backward(da, p[f"l{i}.ln1.g"], ln1c)
            grads[f"l{i}.ln1.g"] = dg1
            grads[f"l{i}.ln1.b"] = db1
            dx = dx_attn + dxp
        np.add.at(grads["tok_emb"], tokens, dx)
        grads["pos_emb"][:t] = dx
        return grads

    def lm_train_step(self, tokens, lr: float) -> float:
        """One cross-entropy step predicting each next token; returns the loss."""
        tokens = np.asarray(tokens, dtype=np.int64)
        logits, _, cache = self.forward(tokens, want_cache=True)
        loss, dlogits = softmax_cross_entropy(logits[:-1], tokens[1:])
        dfull = np.zeros_like(logits)
        dfull[:-1] = dlogits
        grads = self.backward(cache, dfull)
        for name, g in grads.items():
            self.params[name] -= lr * g
        return float(loss)

    # -- incremental session (decode path) ---------------------------------

    def start_session(self) -> "TinySession":
        return TinySession(self)

    # -- checkpointing ------------------------------------------------------

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {f"tiny.{name}": arr for name, arr in self.params.items()}

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], config: TinyConfig) -> "TinyTransformer":
        model = cls(config)
        for name in model.params:
            model.params[name] = arrays[f"tiny.{name}"]
        return model

    def save(self, path) -> None:
        c = self.config
        save_arrays(
            path,
            self.to_arrays(),
            meta={
                "kind": "tiny",
                "vocab_size": c.vocab_size,
                "hidden_dim": c.hidden_dim,
                "n_layers": c.n_layers,
                "n_heads": c.n_heads,
                "context": c.context,
                "mlp_factor": c.mlp_factor,
            },
        )

    @classmethod
    def load(cls, path) -> "TinyTransformer":
        arrays, meta = load_arrays(path)
        config = TinyConfig(
            vocab_size=int(meta["vocab_size"]),
            hidden_dim=int(meta["hidden_dim"]),
            n_layers=int(meta["n_layers"]),
            n_heads=int(meta["n_heads"]),
            context=int(meta["context"]),
            mlp_factor=int(meta["mlp_factor"]),
        )
        return cls.from_arrays(arrays, config)


class TinySession:
    """KV-cached incremental forward; outputs match the stateless forward."""

    def __init__(self, model: TinyTransformer):
        self.model = model
        c = model.config
        dh = c.hidden_dim // c.n_heads
        self._k = [np.zeros((c.n_heads, c.context, dh)) for _ in range(c.n_layers)]
        self._v = [np.zeros((c.n_heads, c.context, dh)) for _ in range(c.n_layers)]
        self._len = 0
        self.forward_calls = 0
        self.positions_computed = 0

    @property
    def length(self) -> int:
        return self._len

    def _step(self, token: int) -> tuple[np.ndarray, np.ndarray]:
        m = self.model
        p = m.params
        c = m.config
        dh = c.hidden_dim // c.n_heads
        pos = self._len
        if pos >= c.context:
            raise ConfigurationError(f"context window of {c.context} exhausted")
        x = p["tok_emb"][token] + p["pos_emb"][pos]
        for i in range(c.n_layers):
            a, _ = _layernorm(x, p[f"l{i}.ln1.g"], p[f"l{i}.ln1.b"])
            q = (a @ p[f"l{i}.wq"]).reshape(c.n_heads, dh)
            self._k[i][:, pos] = (a @ p[f"l{i}.wk"]).reshape(c.n_heads, dh)
            self._v[i][:, pos] = (a @ p[f"l{i}.wv"]).reshape(c.n_heads, dh)
            ctx = attention_step(q, self._k[i][:, : pos + 1], self._v[i][:, : pos + 1])
            x = x + ctx.reshape(c.hidden_dim) @ p[f"l{i}.wo"]
            mm, _ = _layernorm(x, p[f"l{i}.ln2.g"], p[f"l{i}.ln2.b"])
            x = x + np.maximum(mm @ p[f"l{i}.w1"] + p[f"l{i}.b1"], 0.0) @ p[f"l{i}.w2"] + p[f"l{i}.b2"]
        hidden, _ = _layernorm(x, p["lnf.g"], p["lnf.b"])
        logits = hidden @ p["unembed"]
        self._len = pos + 1
        self.positions_computed += 1
        return logits, hidden

    def extend(self, tokens) -> tuple[np.ndarray, np.ndarray]:
        if len(tokens) == 0:
            raise ValueError("extend requires at least one token")
        self.forward_calls += 1
        logits = np.zeros((len(tokens), self.model.vocab_size))
        hidden = np.zeros((len(tokens), self.model.hidden_dim))
        for i, tok in enumerate(tokens):
            logits[i], hidden[i] = self._step(int(tok))
        return logits, hidden

    def truncate(self, keep_len: int) -> None:
        if keep_len < 0 or keep_len > self._len:
            raise ValueError(f"keep_len {keep_len} out of range [0, {self._len}]")
        self._len = keep_len


class ReuseDraft:
    """Draft that fuses the target's last hidden state with token embeddings.

    The first candidate reads the extended head directly off the target
    hidden; deeper candidates run the fusion cell autoregressively over the
    draft's own hidden state.
    """

    def __init__(self, vocab_size: int, hidden_dim: int, seed: int = 0, head: DraftHead | None = None):
        rng = np.random.default_rng(seed)
        self.vocab_size = vocab_size
        self.hidden_dim = hidden_dim
        self.emb = rng.normal(0, 0.1, (vocab_size, hidden_dim))
        self.w_h = rng.normal(0, 0.1, (hidden_dim, hidden_dim))
        self.w_e = rng.normal(0, 0.1, (hidden_dim, hidden_dim))
        self.b = np.zeros(hidden_dim)
        self.head = head if head is not None else DraftHead.random(vocab_size, hidden_dim, rng)
        self.forward_calls = 0

    def _cell(self, hidden: np.ndarray, token: int) -> np.ndarray:
        return np.tanh(self.w_h @ hidden + self.w_e @ self.emb[token] + self.b)

    def propose(self, last_hidden, context, depth: int) -> tuple[list[int], SignalPrediction]:
        if depth < 1:
            raise ValueError("draft depth must be >= 1")
        h = np.asarray(last_hidden, dtype=np.float64)
        logits, pred = head_project(self.head, h)
        candidates = [int(np.argmax(logits))]
        self.forward_calls += 1
        for _ in range(depth - 1):
            h = self._cell(h, candidates[-1])
            candidates.append(int(np.argmax(self.head.w_tok @ h)))
            self.forward_calls += 1
        return candidates, pred

    def cell_train_step(self, h_in, tok_next, h_target, lr: float) -> float:
        """Regress the fused hidden onto the target's next hidden state (MSE)."""
        h_in = np.asarray(h_in, dtype=np.float64)
        tok_next = np.asarray(tok_next, dtype=np.int64)
        h_target = np.asarray(h_target, dtype=np.float64)
        e = self.emb[tok_next]
        pre = h_in @ self.w_h.T + e @ self.w_e.T + self.b
        out = np.tanh(pre)
        resid = out - h_target
        loss = float(np.mean(resid**2))
        dpre = (2.0 / resid.size) * resid * (1.0 - out**2)
        dw_h = dpre.T @ h_in
        dw_e = dpre.T @ e
        db = dpre.sum(axis=0)
        demb = np.zeros_like(self.emb)
        np.add.at(demb, tok_next, dpre @ self.w_e)
        self.w_h -= lr * dw_h
        self.w_e -= lr * dw_e
        self.b -= lr * db
        self.emb -= lr * demb
        return loss

    def to_arrays(self) -> dict[str, np.ndarray]:
        arrays = {
            "draft.emb": self.emb,
            "draft.w_h": self.w_h,
            "draft.w_e": self.w_e,
            "draft.b": self.b,
        }
        arrays.update(self.head.to_arrays())
        return arrays

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "ReuseDraft":
        head = DraftHead.from_arrays(arrays)
        draft = cls(head.vocab_size, head.hidden_dim, head=head)
        draft.emb = arrays["draft.emb"]
        draft.w_h = arrays["draft.w_h"]
        draft.w_e = arrays["draft.w_e"]
        draft.b = arrays["draft.b"]
        return draft

    def save(self, path) -> None:
        save_arrays(path, self.to_arrays(), meta={"kind": "reuse-draft"})

    @classmethod
    def load(cls, path) -> "ReuseDraft":
        arrays, _ = load_arrays(path)
        return cls.from_arrays(arrays)
