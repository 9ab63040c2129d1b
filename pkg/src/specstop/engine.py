"""Speculative decoding loop with signal-gated early exit of reasoning.

Each decode step: read the signal head off the last committed token's hidden
state, update the smoothers, let the draft propose a greedy candidate chain,
verify it against the target in one forward, and commit the accepted prefix
plus the target's recover token. While the reasoning phase is open, a step
whose accepted tokens include a step-split token may be cut at the earliest
such split and the recover token replaced by the reasoning-end marker.

With the exit gate disabled the loop is lossless: output is token-for-token
identical to target-only greedy decoding.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .heads import SignalTriple, decode_signals
from .models import DraftModel, TargetModel
from .stopping import StoppingConfig, TripleSmoother, should_exit
from .tokens import MarkerSet, is_step_split


@dataclass(frozen=True)
class StepOutcome:
    """Result of one draft/verify/commit cycle.

    ``l_acpt``/``t_rec`` are the committed values (post exit-truncation);
    ``l_verified``/``t_rec_verified`` are what plain verification produced.
    """

    t_acpt: tuple[int, ...]
    l_acpt: int
    t_rec: int
    raw: SignalTriple
    smoothed: SignalTriple
    exited: bool
    l_verified: int
    t_rec_verified: int


@dataclass
class GenerationResult:
    prompt: tuple[int, ...]
    output: list[int]
    reasoning_tokens: int
    answer_tokens: int
    exit_position: int | None
    budget_exit: bool
    finish_reason: str
    steps: list[StepOutcome]
    latency_s: float
    target_forwards: int
    draft_forwards: int
    positions_computed: int

    @property
    def accept_lengths(self) -> list[int]:
        return [s.l_acpt for s in self.steps]

    def answer_span(self, markers: MarkerSet, eos: int) -> tuple[int, ...]:
        """Tokens after the reasoning-end marker, excluding eos."""
        if markers.think_close not in self.output:
            return ()
        idx = self.output.index(markers.think_close)
        tail = self.output[idx + 1 :]
        return tuple(t for t in tail if t != eos)

    def step_records(self) -> list[dict]:
        """Per-step trace-log records (JSONL schema)."""
        return [
            {
                "step": i,
                "l_acpt": s.l_acpt,
                "t_rec": s.t_rec,
                "conf_raw": s.raw.confidence,
                "prog_raw": s.raw.progress,
                "rem_raw": s.raw.remaining,
                "conf_s": s.smoothed.confidence,
                "prog_s": s.smoothed.progress,
                "rem_s": s.smoothed.remaining,
                "exited": s.exited,
            }
            for i, s in enumerate(self.steps)
        ]


@dataclass
class EngineState:
    committed: list[int]
    is_thinking: bool
    smoother: TripleSmoother | None
    last_hidden: np.ndarray = field(default=None)  # type: ignore[assignment]
    last_logits: np.ndarray = field(default=None)  # type: ignore[assignment]

    @property
    def cache_len(self) -> int:
        return len(self.committed)


class GenerationSession:
    """One strictly sequential generation over a shared read-only model pair."""

    def __init__(
        self,
        target: TargetModel,
        draft: DraftModel,
        prompt,
        markers: MarkerSet,
        stopping: StoppingConfig | None = None,
        depth: int = 4,
        max_tokens: int = 512,
        answer_budget: int = 64,
        eos: int | None = None,
    ):
        if depth < 1:
            raise ValueError("draft depth must be >= 1")
        if max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        self.target = target
        self.draft = draft
        self.markers = markers
        self.stopping = stopping
        self.depth = depth
        self.max_tokens = max_tokens
        self.answer_budget = answer_budget
        self.eos = eos
        self.prompt = tuple(int(t) for t in prompt)
        self.sess = target.start_session()
        logits, hidden = self.sess.extend(self.prompt)
        self.state = EngineState(
            committed=list(self.prompt),
            is_thinking=markers.think_close not in self.prompt,
            smoother=stopping.make_smoother() if stopping is not None else None,
            last_hidden=hidden[-1],
            last_logits=logits[-1],
        )
        self.steps: list[StepOutcome] = []
        self.finished = False
        self.finish_reason = ""
        self.budget_exit = False
        self.exit_position: int | None = None
        self._deadline = max_tokens

    # -- spec operations ----------------------------------------------------

    def verify_chain(self, candidates) -> tuple[int, int, np.ndarray, np.ndarray]:
        """Greedy-verify a candidate chain in one target forward.

        Returns (l_acpt, t_rec, logits, hiddens) for the candidate positions.
        The session is left extended past the committed prefix; commit
        truncates it back.
        """
        if len(candidates) == 0:
            raise ValueError("candidates must be non-empty")
        expected = int(np.argmax(self.state.last_logits))
        logits, hiddens = self.sess.extend(candidates)
        l_acpt = 0
        for i, cand in enumerate(candidates):
            if int(cand) != expected:
                break
            l_acpt += 1
            expected = int(np.argmax(logits[i]))
        return l_acpt, expected, logits, hiddens

    def truncate_state(self, keep_len: int, replacement: int) -> None:
        """Cut the committed sequence to ``keep_len`` and append ``replacement``.

        Cached per-position states beyond ``keep_len`` are invalidated; the
        replacement token is forwarded immediately so the cache again covers
        the full committed prefix.
        """
        if keep_len < 0 or keep_len > len(self.state.committed):
            raise ValueError(f"keep_len {keep_len} out of range")
        self.sess.truncate(keep_len)
        logits, hidden = self.sess.extend([replacement])
        del self.state.committed[keep_len:]
        self.state.committed.append(int(replacement))
        self.state.last_logits = logits[-1]
        self.state.last_hidden = hidden[-1]

    def decode_step(self) -> StepOutcome:
        if self.finished:
            raise RuntimeError("generation already terminated")
        state = self.state
        base_len = len(state.committed)

        candidates, pred = self.draft.propose(state.last_hidden, state.committed, self.depth)
        raw = decode_signals(pred)
        smoothed = state.smoother.update(raw) if state.smoother is not None else raw

        l_verified, t_rec_verified, _, _ = self.verify_chain(candidates)

        exited = False
        l_final, t_final = l_verified, t_rec_verified
        if (
            self.stopping is not None
            and state.is_thinking
            and should_exit(smoothed, self.stopping)
        ):
            for j, tok in enumerate(candidates[:l_verified]):
                if tok == self.markers.think_close:
                    # natural end of reasoning: later splits belong to the answer
                    break
                if is_step_split(tok, self.markers, self.stopping.marker_mode):
                    exited = True
                    l_final = j + 1
                    t_final = self.markers.think_close
                    self.exit_position = base_len + j - len(self.prompt)
                    break

        accepted = tuple(int(c) for c in candidates[:l_final])
        self.truncate_state(base_len + l_final, t_final)
        newly = list(accepted) + [t_final]

        if exited:
            state.is_thinking = False
        elif self.markers.think_close in newly:
            state.is_thinking = False
        if state.smoother is not None and any(
            is_step_split(t, self.markers, self.stopping.marker_mode if self.stopping else "paragraph")
            for t in newly
        ):
            state.smoother.on_paragraph_boundary()

        outcome = StepOutcome(
            t_acpt=accepted,
            l_acpt=l_final,
            t_rec=int(t_final),
            raw=raw,
            smoothed=smoothed,
            exited=exited,
            l_verified=l_verified,
            t_rec_verified=int(t_rec_verified),
        )
        self.steps.append(outcome)
        self._after_commit(newly)
        return outcome

    # -- termination bookkeeping ---------------------------------------------

    def _generated(self) -> int:
        return len(self.state.committed) - len(self.prompt)

    def _after_commit(self, newly: list[int]) -> None:
        if self.eos is not None and self.eos in newly:
            first = len(self.state.committed) - len(newly) + newly.index(self.eos)
            if first + 1 < len(self.state.committed):
                self.sess.truncate(first + 1)
                del self.state.committed[first + 1 :]
            self.finished = True
            self.finish_reason = "eos"
            return
        if self.state.is_thinking:
            if self._generated() >= self.max_tokens:
                limit = len(self.prompt) + self.max_tokens
                if limit < len(self.state.committed):
                    self.sess.truncate(limit)
                    del self.state.committed[limit:]
                self.truncate_state(len(self.state.committed), self.markers.think_close)
                self.budget_exit = True
                self.state.is_thinking = False
                self._deadline = self._generated() + self.answer_budget
        else:
            if self._generated() >= self._deadline:
                limit = len(self.prompt) + self._deadline
                if limit < len(self.state.committed):
                    self.sess.truncate(limit)
                    del self.state.committed[limit:]
                self.finished = True
                self.finish_reason = "budget"

    # -- driver ----------------------------------------------------------------

    def run(self) -> GenerationResult:
        start = time.perf_counter()
        while not self.finished:
            self.decode_step()
        latency = time.perf_counter() - start
        output = self.state.committed[len(self.prompt) :]
        reasoning, answer = _phase_counts(output, self.markers, self.eos)
        return GenerationResult(
            prompt=self.prompt,
            output=output,
            reasoning_tokens=reasoning,
            answer_tokens=answer,
            exit_position=self.exit_position,
            budget_exit=self.budget_exit,
            finish_reason=self.finish_reason,
            steps=self.steps,
            latency_s=latency,
            target_forwards=self.sess.forward_calls,
            draft_forwards=self.draft.forward_calls,
            positions_computed=self.sess.positions_computed,
        )


def _phase_counts(output, markers: MarkerSet, eos: int | None) -> tuple[int, int]:
    body = list(output)
    if eos is not None and eos in body:
        body = body[: body.index(eos)]
    if markers.think_close in body:
        close = body.index(markers.think_close)
        return close, len(body) - close - 1
    return len(body), 0


def generate(
    prompt,
    draft: DraftModel,
    target: TargetModel,
    markers: MarkerSet,
    stopping: StoppingConfig | None = None,
    depth: int = 4,
    max_tokens: int = 512,
    answer_budget: int = 64,
    eos: int | None = None,
) -> GenerationResult:
    """Run one full generation; see GenerationSession for the step mechanics."""
    session = GenerationSession(
        target,
        draft,
        prompt,
        markers,
        stopping=stopping,
        depth=depth,
        max_tokens=max_tokens,
        answer_budget=answer_budget,
        eos=eos,
    )
    return session.run()
