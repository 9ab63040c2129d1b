"""Extended draft-head projection: token logits plus three signal scalars.

The head is one linear map whose output is split into vocabulary logits and
the raw confidence / progress / remaining-length readouts. The three signal
rows are separate output coordinates, so their gradients never touch the
token rows (and vice versa).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ConfigurationError(ValueError):
    """Shape or configuration mismatch between model components."""


@dataclass(frozen=True)
class SignalPrediction:
    """Raw head outputs: pre-sigmoid confidence/progress, log-scale remaining."""

    conf_raw: float
    prog_raw: float
    rem_raw: float


@dataclass(frozen=True)
class SignalTriple:
    """Decoded signals: confidence and progress in [0, 1], remaining in tokens."""

    confidence: float
    progress: float
    remaining: float


class DraftHead:
    """Extended projection: W_tok (V, D) stacked with three signal rows (D,)."""

    def __init__(self, w_tok, w_conf, w_prog, w_rem):
        self.w_tok = np.asarray(w_tok, dtype=np.float64)
        self.w_conf = np.asarray(w_conf, dtype=np.float64).reshape(-1)
        self.w_prog = np.asarray(w_prog, dtype=np.float64).reshape(-1)
        self.w_rem = np.asarray(w_rem, dtype=np.float64).reshape(-1)
        dims = {self.w_tok.shape[1], self.w_conf.size, self.w_prog.size, self.w_rem.size}
        if len(dims) != 1:
            raise ConfigurationError(f"inconsistent head input dims: {sorted(dims)}")
        for arr in (self.w_tok, self.w_conf, self.w_prog, self.w_rem):
            if not np.all(np.isfinite(arr)):
                raise ConfigurationError("head weights must be finite")

    @property
    def vocab_size(self) -> int:
        return self.w_tok.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.w_tok.shape[1]

    @classmethod
    def zeros(cls, vocab_size: int, hidden_dim: int) -> "DraftHead":
        return cls(
            np.zeros((vocab_size, hidden_dim)),
            np.zeros(hidden_dim),
            np.zeros(hidden_dim),
            np.zeros(hidden_dim),
        )

    @classmethod
    def random(cls, vocab_size: int, hidden_dim: int, rng, scale: float = 0.1) -> "DraftHead":
        return cls(
            rng.normal(0.0, scale, size=(vocab_size, hidden_dim)),
            rng.normal(0.0, scale, size=hidden_dim),
            rng.normal(0.0, scale, size=hidden_dim),
            rng.normal(0.0, scale, size=hidden_dim),
        )

    @classmethod
    def signal_identity(cls, vocab_size: int, hidden_dim: int) -> "DraftHead":
        """Head whose signal rows read hidden dims 0..2 directly.

        Paired with models that plant raw signal values in those dims, this
        yields a signal readout that is exact by construction.
        """
        if hidden_dim < 3:
            raise ConfigurationError("signal_identity head needs hidden_dim >= 3")
        head = cls.zeros(vocab_size, hidden_dim)
        head.w_conf[0] = 1.0
        head.w_prog[1] = 1.0
        head.w_rem[2] = 1.0
        return head

    def copy(self) -> "DraftHead":
        return DraftHead(
            self.w_tok.copy(), self.w_conf.copy(), self.w_prog.copy(), self.w_rem.copy()
        )

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {
            "head.w_tok": self.w_tok,
            "head.w_conf": self.w_conf,
            "head.w_prog": self.w_prog,
            "head.w_rem": self.w_rem,
        }

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "DraftHead":
        return cls(
            arrays["head.w_tok"],
            arrays["head.w_conf"],
            arrays["head.w_prog"],
            arrays["head.w_rem"],
        )


def head_project(head: DraftHead, hidden) -> tuple[np.ndarray, SignalPrediction]:
    """Apply the extended projection to one hidden vector.

    Returns the token logits alongside the raw signal readouts.
    """
    h = np.asarray(hidden, dtype=np.float64).reshape(-1)
    if h.size != head.hidden_dim:
        raise ConfigurationError(
            f"hidden dim {h.size} does not match head dim {head.hidden_dim}"
        )
    logits = head.w_tok @ h
    pred = SignalPrediction(
        conf_raw=float(head.w_conf @ h),
        prog_raw=float(head.w_prog @ h),
        rem_raw=float(head.w_rem @ h),
    )
    return logits, pred


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out


def decode_signals(pred: SignalPrediction) -> SignalTriple:
    """Invert the training links: sigmoid for confidence/progress, expm1 for remaining."""
    return SignalTriple(
        confidence=float(sigmoid(pred.conf_raw)),
        progress=float(sigmoid(pred.prog_raw)),
        remaining=max(0.0, float(np.expm1(pred.rem_raw))),
    )
