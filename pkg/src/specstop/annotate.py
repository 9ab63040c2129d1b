"""Training-data construction: minimal-prefix search and signal labels.

A trace's reasoning is probed paragraph by paragraph: the reasoning-end
marker is force-inserted after each paragraph and the generating model is
re-run; the earliest insertion point that still reproduces the reference
answer marks the minimal reasoning segment. Per-token labels are then
attached: running geometric-mean confidence, linear progress toward the
exit point, and a token countdown to it.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .models import TargetModel, greedy_decode
from .tokens import MalformedTraceError, MarkerSet, ReasoningTrace

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


def extract_think_span(
    full_output: Sequence[int], markers: MarkerSet
) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Split a generated stream into (reasoning, answer) around the think markers."""
    seq = list(full_output)
    opens = [i for i, t in enumerate(seq) if t == markers.think_open]
    closes = [i for i, t in enumerate(seq) if t == markers.think_close]
    if len(opens) != 1 or len(closes) != 1 or opens[0] > closes[0]:
        raise MalformedTraceError(
            f"expected exactly one think span, got opens={opens} closes={closes}"
        )
    return tuple(seq[opens[0] + 1 : closes[0]]), tuple(seq[closes[0] + 1 :])


class AnswerOracle(Protocol):
    def check(
        self, prompt: Sequence[int], reasoning_prefix: Sequence[int], markers: MarkerSet
    ) -> tuple[int, ...]:
        """Answer produced when the reasoning is force-closed after the prefix."""
        ...


class ModelAnswerOracle:
    """Answer oracle backed by a generating model.

    Re-runs the model from prompt + prefix + reasoning-end marker and decodes
    greedily until the end-of-sequence token.
    """

    def __init__(self, model: TargetModel, eos: int, max_answer_tokens: int = 64):
        self.model = model
        self.eos = eos
        self.max_answer_tokens = max_answer_tokens
        self.calls = 0

    def check(
        self, prompt: Sequence[int], reasoning_prefix: Sequence[int], markers: MarkerSet
    ) -> tuple[int, ...]:
        self.calls += 1
        ctx = list(prompt) + list(reasoning_prefix) + [markers.think_close]
        out = greedy_decode(self.model, ctx, self.max_answer_tokens, self.eos)
        if out and out[-1] == self.eos:
            out = out[:-1]
        return tuple(out)


def minimal_prefix_search(
    trace: ReasoningTrace,
    oracle: AnswerOracle,
    reference_answer: Sequence[int],
    markers: MarkerSet,
) -> int:
    """Earliest paragraph index whose prefix still yields the reference answer.

    Paragraphs are scanned in order from the first; if no prefix succeeds the
    final paragraph index is returned (the full trace is retained).
    """
    if not trace.paragraph_ends:
        raise ValueError("trace has no paragraphs to probe")
    reference = tuple(reference_answer)
    for k, end in enumerate(trace.paragraph_ends):
        if oracle.check(trace.prompt, trace.reasoning[: end + 1], markers) == reference:
            return k
    return len(trace.paragraph_ends) - 1


@dataclass(frozen=True)
class SignalLabels:
    """Per reasoning-token targets over positions 0..E of the retained span."""

    conf: tuple[float, ...]
    prog: tuple[float, ...]
    remaining: tuple[int, ...]

    def __post_init__(self):
        n = len(self.conf)
        if len(self.prog) != n or len(self.remaining) != n:
            raise ValueError("label arrays must have equal length")


def annotate_signals(
    trace: ReasoningTrace, exit_token_position: int, token_probs: Sequence[float]
) -> SignalLabels:
    """Confidence/progress/remaining labels for positions 0..exit_token_position.

    Confidence at i is the geometric mean of the realized-token probabilities
    over 0..i; progress rises linearly from 0 to 1 at the exit position;
    remaining counts tokens down to it.
    """
    last = exit_token_position
    if not 0 <= last < len(trace.reasoning):
        raise ValueError(f"exit position {last} outside reasoning span")
    if len(token_probs) < last + 1:
        raise ValueError("need a probability for every retained position")
    probs = np.asarray(token_probs[: last + 1], dtype=np.float64)
    if np.any(probs > 1.0) or np.any(probs < 0.0):
        raise ValueError("token probabilities must lie in [0, 1]")
    if np.any(probs <= 0.0):
        logger.warning("clamping %d zero probabilities to %.0e", int(np.sum(probs <= 0.0)), PROB_FLOOR)
        probs = np.maximum(probs, PROB_FLOOR)
    running = np.cumsum(np.log(probs)) / np.arange(1, last + 2)
    conf = np.exp(running)
    if last == 0:
        prog = np.array([1.0])
    else:
        prog = np.arange(last + 1) / last
    remaining = tuple(int(last - i) for i in range(last + 1))
    return SignalLabels(conf=tuple(conf.tolist()), prog=tuple(prog.tolist()), remaining=remaining)


@dataclass(frozen=True)
class AnnotatedTrace:
    """A trace truncated at its minimal exit point, with signal labels.

    ``exit_paragraph`` is the paragraph index in the original trace;
    ``total_paragraphs`` records how many the original had, so pruning
    statistics survive serialization.
    """

    trace_id: str
    trace: ReasoningTrace
    labels: SignalLabels
    reference_answer: tuple[int, ...]
    exit_paragraph: int
    total_paragraphs: int

    @property
    def exit_token(self) -> int:
        return len(self.trace.reasoning) - 1

    @property
    def pruned_fraction(self) -> float:
        return (self.total_paragraphs - (self.exit_paragraph + 1)) / self.total_paragraphs


def build_annotated_trace(
    trace_id: str,
    trace: ReasoningTrace,
    oracle: AnswerOracle,
    markers: MarkerSet,
    token_probs: Sequence[float],
) -> AnnotatedTrace:
    """Run the prefix search and annotation for one trace."""
    exit_paragraph = minimal_prefix_search(trace, oracle, trace.answer, markers)
    end = trace.paragraph_ends[exit_paragraph]
    labels = annotate_signals(trace, end, token_probs)
    truncated = ReasoningTrace(
        prompt=trace.prompt,
        reasoning=trace.reasoning[: end + 1],
        answer=trace.answer,
        paragraph_ends=trace.paragraph_ends[: exit_paragraph + 1],
    )
    return AnnotatedTrace(
        trace_id=trace_id,
        trace=truncated,
        labels=labels,
        reference_answer=trace.answer,
        exit_paragraph=exit_paragraph,
        total_paragraphs=len(trace.paragraph_ends),
    )


# --- JSONL serialization -------------------------------------------------
#
# One trace per line:
#   {"id": str, "prompt": [int], "reasoning": [int], "answer": [int],
#    "paragraph_ends": [int], "exit_paragraph": int,
#    "labels": {"conf": [float], "prog": [float], "remaining": [int]}}
# Raw (unannotated) traces omit exit_paragraph/labels.


def trace_to_record(trace_id: str, trace: ReasoningTrace) -> dict:
    return {
        "id": trace_id,
        "prompt": list(trace.prompt),
        "reasoning": list(trace.reasoning),
        "answer": list(trace.answer),
        "paragraph_ends": list(trace.paragraph_ends),
    }


def trace_from_record(record: dict, markers: MarkerSet | None = None) -> tuple[str, ReasoningTrace]:
    reasoning = tuple(record["reasoning"])
    ends = record.get("paragraph_ends")
    if ends is None:
        if markers is None:
            raise ValueError("record lacks paragraph_ends and no markers given")
        trace = ReasoningTrace.from_spans(
            record["prompt"], reasoning, record["answer"], markers
        )
    else:
        trace = ReasoningTrace(
            prompt=tuple(record["prompt"]),
            reasoning=reasoning,
            answer=tuple(record["answer"]),
            paragraph_ends=tuple(ends),
        )
    return str(record["id"]), trace


def annotated_to_record(ann: AnnotatedTrace) -> dict:
    record = trace_to_record(ann.trace_id, ann.trace)
    record["exit_paragraph"] = ann.exit_paragraph
    record["total_paragraphs"] = ann.total_paragraphs
    record["labels"] = {
        "conf": list(ann.labels.conf),
        "prog": list(ann.labels.prog),
        "remaining": list(ann.labels.remaining),
    }
    return record


def annotated_from_record(record: dict) -> AnnotatedTrace:
    trace_id, trace = trace_from_record(record)
    labels = SignalLabels(
        conf=tuple(record["labels"]["conf"]),
        prog=tuple(record["labels"]["prog"]),
        remaining=tuple(int(r) for r in record["labels"]["remaining"]),
    )
    return AnnotatedTrace(
        trace_id=trace_id,
        trace=trace,
        labels=labels,
        reference_answer=trace.answer,
        exit_paragraph=int(record["exit_paragraph"]),
        total_paragraphs=int(record.get("total_paragraphs", record["exit_paragraph"] + 1)),
    )


def write_jsonl(path, records) -> None:
    with Path(path).open("w") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")


def read_jsonl(path) -> list[dict]:
    records = []
    with Path(path).open() as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
