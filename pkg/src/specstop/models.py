"""Target/draft model abstractions and the scripted table implementations.

TableModel is the exact oracle used by the correctness tests: its greedy
continuation is a lookup, so speculative decoding can be checked token-for-
token against a brute-force reference. Hidden states are deterministic hash
vectors, optionally carrying a planted signal plan in the first dims so a
``DraftHead.signal_identity`` head reads scripted signals exactly.
"""

from __future__ import annotations

from typing import Protocol, Sequence

import numpy as np

from .heads import DraftHead, SignalPrediction, head_project


class TargetModel(Protocol):
    vocab_size: int
    hidden_dim: int

    def forward(self, context: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        """Per-position (logits, hidden) over the whole context."""
        ...

    def start_session(self) -> "TargetSession":
        ...


class TargetSession(Protocol):
    """Incremental forward interface with truncation, used by the engine.

    ``extend`` consumes new tokens and returns (logits, hiddens) for exactly
    those positions; outputs must match a stateless ``forward`` over the same
    full context.
    """

    forward_calls: int
    positions_computed: int

    def extend(self, tokens: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        ...

    def truncate(self, keep_len: int) -> None:
        ...

    @property
    def length(self) -> int:
        ...


class DraftModel(Protocol):
    head: DraftHead
    forward_calls: int

    def propose(
        self, last_hidden: np.ndarray, context: Sequence[int], depth: int
    ) -> tuple[list[int], SignalPrediction]:
        """Greedy candidate chain of ``depth`` tokens plus the raw signals.

        Signals are always computed from ``last_hidden`` (the target-side
        hidden state of the last committed token) before proposing.
        """
        ...


class TableModel:
    """Deterministic next-token map with hash-derived hidden states.

    ``script`` maps full context prefixes to the scripted successor; unknown
    prefixes fall back to ``fallback``. The scripted token receives logit
    ``peak`` and all others 0, so realized-token probabilities are sharp but
    strictly inside (0, 1).
    """

    def __init__(
        self,
        script: dict[tuple[int, ...], int],
        vocab_size: int,
        fallback: int,
        hidden_dim: int = 8,
        seed: int = 0,
        peak: float = 10.0,
        signal_plan: dict[int, tuple[float, float, float]] | None = None,
        plant_next_token: bool = False,
    ):
        self.script = script
        self.vocab_size = vocab_size
        self.fallback = fallback
        self.hidden_dim = hidden_dim
        self.seed = seed
        self.peak = peak
        self.signal_plan = signal_plan or {}
        self.plant_next_token = plant_next_token
        if plant_next_token and hidden_dim < 4 + vocab_size:
            raise ValueError("plant_next_token requires hidden_dim >= 4 + vocab_size")

    def next_token(self, prefix: Sequence[int]) -> int:
        return self.script.get(tuple(prefix), self.fallback)

    def _position_outputs(self, prefix: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray]:
        nxt = self.script.get(prefix, self.fallback)
        logits = np.zeros(self.vocab_size)
        logits[nxt] = self.peak
        pos = len(prefix) - 1
        rng = np.random.default_rng(
            (self.seed * 1_000_003 + pos * 8191 + prefix[-1]) & 0xFFFFFFFF
        )
        hidden = rng.normal(0.0, 0.25, self.hidden_dim)
        if pos in self.signal_plan:
            hidden[0], hidden[1], hidden[2] = self.signal_plan[pos]
            hidden[3] = 1.0
        if self.plant_next_token:
            hidden[4 : 4 + self.vocab_size] = 0.0
            hidden[4 + nxt] = 0.5
        return logits, hidden

    def forward(self, context: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        if len(context) == 0:
            raise ValueError("context must be non-empty")
        ctx = tuple(context)
        if any(t < 0 or t >= self.vocab_size for t in ctx):
            raise ValueError("context token outside vocabulary")
        logits = np.zeros((len(ctx), self.vocab_size))
        hidden = np.zeros((len(ctx), self.hidden_dim))
        for i in range(len(ctx)):
            logits[i], hidden[i] = self._position_outputs(ctx[: i + 1])
        return logits, hidden

    def start_session(self) -> "TableSession":
        return TableSession(self)

    @classmethod
    def from_sequence(
        cls,
        prompt: Sequence[int],
        continuation: Sequence[int],
        vocab_size: int,
        fallback: int,
        **kwargs,
    ) -> "TableModel":
        """Script the model to replay ``continuation`` greedily after ``prompt``."""
        script: dict[tuple[int, ...], int] = {}
        seq = list(prompt) + list(continuation)
        for i in range(len(prompt) - 1, len(seq) - 1):
            script[tuple(seq[: i + 1])] = seq[i + 1]
        return cls(script, vocab_size=vocab_size, fallback=fallback, **kwargs)


class TableSession:
    def __init__(self, model: TableModel):
        self.model = model
        self._tokens: list[int] = []
        self.forward_calls = 0
        self.positions_computed = 0

    @property
    def length(self) -> int:
        return len(self._tokens)

    def extend(self, tokens: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        if len(tokens) == 0:
            raise ValueError("extend requires at least one token")
        self.forward_calls += 1
        logits = np.zeros((len(tokens), self.model.vocab_size))
        hidden = np.zeros((len(tokens), self.model.hidden_dim))
        for i, tok in enumerate(tokens):
            self._tokens.append(int(tok))
            logits[i], hidden[i] = self.model._position_outputs(tuple(self._tokens))
            self.positions_computed += 1
        return logits, hidden

    def truncate(self, keep_len: int) -> None:
        if keep_len < 0 or keep_len > len(self._tokens):
            raise ValueError(f"keep_len {keep_len} out of range [0, {len(self._tokens)}]")
        del self._tokens[keep_len:]


class TableDraft:
    """Scripted draft: candidates from a suffix-keyed next-token map.

    ``key_order`` selects how much context the lookup sees: None keys the
    script by the full prefix, an integer keys it by the last-k tokens
    (a Markov draft, which resyncs after rejections).
    """

    def __init__(
        self,
        script: dict[tuple[int, ...], int],
        fallback: int,
        head: DraftHead,
        key_order: int | None = None,
    ):
        self.script = script
        self.fallback = fallback
        self.head = head
        self.key_order = key_order
        self.forward_calls = 0

    def _key(self, ctx: list[int]) -> tuple[int, ...]:
        if self.key_order is None:
            return tuple(ctx)
        return tuple(ctx[-self.key_order :])

    def propose(
        self, last_hidden: np.ndarray, context: Sequence[int], depth: int
    ) -> tuple[list[int], SignalPrediction]:
        if depth < 1:
            raise ValueError("draft depth must be >= 1")
        _, pred = head_project(self.head, last_hidden)
        ctx = list(context)
        candidates: list[int] = []
        for _ in range(depth):
            nxt = self.script.get(self._key(ctx), self.fallback)
            candidates.append(nxt)
            ctx.append(nxt)
            self.forward_calls += 1
        return candidates, pred


def greedy_decode(model: TargetModel, prompt: Sequence[int], max_new: int, eos: int) -> list[int]:
    """Plain one-token-at-a-time greedy decoding; the spec-free baseline."""
    ctx = list(prompt)
    out: list[int] = []
    for _ in range(max_new):
        logits, _ = model.forward(ctx)
        nxt = int(np.argmax(logits[-1]))
        out.append(nxt)
        ctx.append(nxt)
        if nxt == eos:
            break
    return out
