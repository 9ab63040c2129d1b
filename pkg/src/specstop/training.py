"""Joint training of the token head and the three signal regressions.

The token loss is standard cross-entropy; confidence and progress use MSE
through a sigmoid link and remaining-length uses mean squared logarithmic
error. The three regression losses are balanced per step by gradient-norm
weights; the token loss keeps coefficient 1. Because each task owns a
disjoint slice of the head, the per-task gradients never interfere.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .heads import DraftHead, sigmoid
from .kernels import softmax_cross_entropy

logger = logging.getLogger(__name__)

TRAIN_LOG_COLUMNS = (
    "step",
    "loss_cls",
    "loss_conf",
    "loss_prog",
    "loss_rem",
    "lambda_c",
    "lambda_p",
    "lambda_r",
    "total",
)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TaskWeights:
    """Per-step balancing weights for the three regression tasks."""

    conf: float
    prog: float
    rem: float


@dataclass(frozen=True)
class LossBreakdown:
    cls: float
    conf: float
    prog: float
    rem: float
    weights: TaskWeights

    @property
    def total(self) -> float:
        w = self.weights
        return self.cls + w.conf * self.conf + w.prog * self.prog + w.rem * self.rem


@dataclass
class TrainBatch:
    """N examples of (hidden vector, gold next token, gold signal targets)."""

    hidden: np.ndarray
    gold_tok: np.ndarray
    conf: np.ndarray
    prog: np.ndarray
    rem: np.ndarray
    batch_id: str = ""

    def __post_init__(self):
        self.hidden = np.asarray(self.hidden, dtype=np.float64)
        self.gold_tok = np.asarray(self.gold_tok, dtype=np.int64)
        self.conf = np.asarray(self.conf, dtype=np.float64)
        self.prog = np.asarray(self.prog, dtype=np.float64)
        self.rem = np.asarray(self.rem, dtype=np.float64)
        n = self.hidden.shape[0]
        if n < 1:
            raise ValueError("batch must hold at least one example")
        for arr in (self.gold_tok, self.conf, self.prog, self.rem):
            if arr.shape[0] != n:
                raise ValueError("batch arrays must share the leading dimension")
        if np.any(self.conf < 0) or np.any(self.conf > 1) or np.any(self.prog < 0) or np.any(self.prog > 1):
            raise ValueError("confidence/progress targets must lie in [0, 1]")
        if np.any(self.rem < 0):
            raise ValueError("remaining targets must be >= 0")

    def __len__(self) -> int:
        return self.hidden.shape[0]


def loss_cls(logits: np.ndarray, gold: np.ndarray) -> float:
    """Mean cross-entropy of gold tokens under row-softmax of logits."""
    loss, _ = softmax_cross_entropy(logits, gold)
    return float(loss)


def loss_conf(conf_raw: np.ndarray, gold: np.ndarray) -> float:
    return float(np.mean((sigmoid(conf_raw) - gold) ** 2))


def loss_prog(prog_raw: np.ndarray, gold: np.ndarray) -> float:
    return float(np.mean((sigmoid(prog_raw) - gold) ** 2))


def loss_rem(rem_raw: np.ndarray, gold: np.ndarray) -> float:
    return float(np.mean((rem_raw - np.log1p(gold)) ** 2))


def dynamic_weights(norm_conf: float, norm_prog: float, norm_rem: float) -> TaskWeights:
    """Normalize the three task gradient norms into balancing weights.

    A fully degenerate batch (all norms zero) falls back to uniform weights.
    """
    norms = (norm_conf, norm_prog, norm_rem)
    if any(g < 0 for g in norms):
        raise ValueError("gradient norms must be >= 0")
    total = sum(norms)
    if total == 0.0:
        logger.warning("degenerate batch: all task gradient norms are zero")
        return TaskWeights(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)
    return TaskWeights(*(g / total for g in norms))


@dataclass(frozen=True)
class HeadGradients:
    w_tok: np.ndarray
    w_conf: np.ndarray
    w_prog: np.ndarray
    w_rem: np.ndarray


def head_forward(head: DraftHead, batch: TrainBatch):
    logits = batch.hidden @ head.w_tok.T
    return (
        logits,
        batch.hidden @ head.w_conf,
        batch.hidden @ head.w_prog,
        batch.hidden @ head.w_rem,
    )


def head_losses_and_grads(head: DraftHead, batch: TrainBatch) -> tuple[LossBreakdown, HeadGradients]:
    """Per-task losses and analytic gradients for one batch.

    The breakdown's weights are the gradient-norm weights computed from this
    same batch.
    """
    n = len(batch)
    logits, conf_raw, prog_raw, rem_raw = head_forward(head, batch)

    ce, dlogits = softmax_cross_entropy(logits, batch.gold_tok)
    grad_tok = dlogits.T @ batch.hidden

    s_conf = sigmoid(conf_raw)
    resid_conf = s_conf - batch.conf
    l_conf = float(np.mean(resid_conf**2))
    grad_conf = (2.0 / n) * ((resid_conf * s_conf * (1.0 - s_conf)) @ batch.hidden)

    s_prog = sigmoid(prog_raw)
    resid_prog = s_prog - batch.prog
    l_prog = float(np.mean(resid_prog**2))
    grad_prog = (2.0 / n) * ((resid_prog * s_prog * (1.0 - s_prog)) @ batch.hidden)

    resid_rem = rem_raw - np.log1p(batch.rem)
    l_rem = float(np.mean(resid_rem**2))
    grad_rem = (2.0 / n) * (resid_rem @ batch.hidden)

    weights = dynamic_weights(
        float(np.linalg.norm(grad_conf)),
        float(np.linalg.norm(grad_prog)),
        float(np.linalg.norm(grad_rem)),
    )
    breakdown = LossBreakdown(cls=float(ce), conf=l_conf, prog=l_prog, rem=l_rem, weights=weights)
    return breakdown, HeadGradients(grad_tok, grad_conf, grad_prog, grad_rem)


@dataclass
class SgdOptimizer:
    """Plain stochastic gradient descent with a fixed learning rate."""

    lr: float = 1e-2

    def apply(self, param: np.ndarray, grad: np.ndarray) -> None:
        param -= self.lr * grad


def train_step(
    batch: TrainBatch,
    head: DraftHead,
    opt: SgdOptimizer,
    signal_tasks_enabled: bool = True,
) -> LossBreakdown:
    """One update on the combined objective; returns the pre-update breakdown.

    With ``signal_tasks_enabled`` false only the token rows are trained,
    which serves as the co-training control.
    """
    breakdown, grads = head_losses_and_grads(head, batch)
    if not np.isfinite(breakdown.total):
        raise TrainingDivergedError(f"non-finite loss on batch {batch.batch_id!r}")
    opt.apply(head.w_tok, grads.w_tok)
    if signal_tasks_enabled:
        w = breakdown.weights
        opt.apply(head.w_conf, w.conf * grads.w_conf)
        opt.apply(head.w_prog, w.prog * grads.w_prog)
        opt.apply(head.w_rem, w.rem * grads.w_rem)
    return breakdown


def evaluate(head: DraftHead, batch: TrainBatch) -> LossBreakdown:
    breakdown, _ = head_losses_and_grads(head, batch)
    return breakdown


SIGNAL_LOSSES = {
    "conf": lambda head, batch: loss_conf(batch.hidden @ head.w_conf, batch.conf),
    "prog": lambda head, batch: loss_prog(batch.hidden @ head.w_prog, batch.prog),
    "rem": lambda head, batch: loss_rem(batch.hidden @ head.w_rem, batch.rem),
}


def gradient_check(head: DraftHead, batch: TrainBatch, eps: float = 1e-4) -> float:
    """Central finite differences of each regression loss over all signal rows.

    Returns the max relative error between numeric and analytic gradients.
    Cross-task entries must agree exactly at zero: each loss reads only its
    own head row, so perturbing any other row leaves it bitwise unchanged.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-6, 1e-3]")
    _, grads = head_losses_and_grads(head, batch)
    analytic = {
        "conf": {"w_conf": grads.w_conf, "w_prog": 0.0, "w_rem": 0.0},
        "prog": {"w_conf": 0.0, "w_prog": grads.w_prog, "w_rem": 0.0},
        "rem": {"w_conf": 0.0, "w_prog": 0.0, "w_rem": grads.w_rem},
    }
    rows = {"w_conf": head.w_conf, "w_prog": head.w_prog, "w_rem": head.w_rem}
    worst = 0.0
    for task, loss_fn in SIGNAL_LOSSES.items():
        for row_name, row in rows.items():
            ana = analytic[task][row_name]
            for d in range(row.size):
                orig = row[d]
                row[d] = orig + eps
                plus = loss_fn(head, batch)
                row[d] = orig - eps
                minus = loss_fn(head, batch)
                row[d] = orig
                numeric = (plus - minus) / (2.0 * eps)
                a = float(ana if np.isscalar(ana) else ana[d])
                denom = max(abs(a), abs(numeric))
                if denom < 1e-10:
                    continue
                worst = max(worst, abs(a - numeric) / denom)
    return worst


class TrainLogWriter:
    """CSV log with one row per training step."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = self.path.open("w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(TRAIN_LOG_COLUMNS)

    def log(self, step: int, breakdown: LossBreakdown) -> None:
        w = breakdown.weights
        self._writer.writerow(
            [
                step,
                f"{breakdown.cls:.8f}",
                f"{breakdown.conf:.8f}",
                f"{breakdown.prog:.8f}",
                f"{breakdown.rem:.8f}",
                f"{w.conf:.8f}",
                f"{w.prog:.8f}",
                f"{w.rem:.8f}",
                f"{breakdown.total:.8f}",
            ]
        )

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
