"""Token sequences, special-marker sets, and paragraph segmentation.

All types here are immutable value data and safe to share across threads.
The toy vocabulary pins the special markers to fixed low ids so test
fixtures and golden files are stable across runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

THINK_OPEN = 0
THINK_CLOSE = 1
PARA_SPLIT = 2
EOS = 3
# Discourse markers occupy 4..7; the contrastive transition words are a
# subset of them.
DISCOURSE_IDS = (4, 5, 6, 7)
CONTRASTIVE_IDS = (4, 5, 7)

RESERVED_SURFACES = {
    THINK_OPEN: "<think>",
    THINK_CLOSE: "</think>",
    PARA_SPLIT: "\n\n",
    EOS: "<eos>",
    4: "Wait",
    5: "But",
    6: "Therefore",
    7: "Alternatively",
}

MarkerMode = Literal["paragraph", "discourse", "contrastive"]


class MalformedTraceError(ValueError):
    """Raised when a token stream violates the think-span structure."""


@dataclass(frozen=True)
class Vocabulary:
    """Token id space of size ``size`` with a total surface-string map."""

    size: int
    surface: tuple[str, ...]

    def __post_init__(self):
        if self.size < 8:
            raise ValueError(f"vocabulary must hold all special markers, got size {self.size}")
        if len(self.surface) != self.size:
            raise ValueError("surface map must be total over [0, size)")

    def render(self, tokens: Sequence[int]) -> str:
        return " ".join(self.surface[t] for t in tokens)


def toy_vocabulary(size: int = 64) -> Vocabulary:
    """Build the default toy vocabulary: reserved markers plus plain tokens."""
    surface = [RESERVED_SURFACES.get(i, f"w{i}") for i in range(size)]
    return Vocabulary(size=size, surface=tuple(surface))


@dataclass(frozen=True)
class MarkerSet:
    """Special-token ids controlling reasoning boundaries and step splits."""

    think_open: int = THINK_OPEN
    think_close: int = THINK_CLOSE
    step_split_paragraph: frozenset[int] = frozenset({PARA_SPLIT})
    step_split_discourse: frozenset[int] = frozenset(DISCOURSE_IDS)
    discourse_contrastive: frozenset[int] = frozenset(CONTRASTIVE_IDS)

    def __post_init__(self):
        if self.think_open == self.think_close:
            raise ValueError("think_open and think_close must differ")
        reserved = {self.think_open, self.think_close}
        if (self.step_split_paragraph | self.step_split_discourse) & reserved:
            raise ValueError("step-split sets must exclude the think markers")
        if not self.discourse_contrastive <= self.step_split_discourse:
            raise ValueError("contrastive markers must be a subset of discourse markers")

    def split_set(self, mode: MarkerMode = "paragraph") -> frozenset[int]:
        if mode == "paragraph":
            return self.step_split_paragraph
        if mode == "discourse":
            return self.step_split_discourse
        if mode == "contrastive":
            return self.discourse_contrastive
        raise ValueError(f"unknown marker mode: {mode!r}")


def is_step_split(token: int, markers: MarkerSet, mode: MarkerMode = "paragraph") -> bool:
    """Membership test of ``token`` against the split set selected by ``mode``."""
    return token in markers.split_set(mode)


def segment_paragraphs(reasoning: Sequence[int], markers: MarkerSet) -> list[int]:
    """Paragraph-end indices of a reasoning span.

    Every position holding a paragraph delimiter ends a paragraph; a trailing
    run without a delimiter still closes the final paragraph, so the spans
    always partition [0, len).
    """
    if len(reasoning) == 0:
        raise ValueError("reasoning span must be non-empty")
    ends = [i for i, tok in enumerate(reasoning) if tok in markers.step_split_paragraph]
    last = len(reasoning) - 1
    if not ends or ends[-1] != last:
        ends.append(last)
    return ends


@dataclass(frozen=True)
class ReasoningTrace:
    """Tokenized prompt, reasoning span, and answer with paragraph boundaries.

    ``reasoning`` holds the content strictly between the think markers;
    ``paragraph_ends`` indexes into it.
    """

    prompt: tuple[int, ...]
    reasoning: tuple[int, ...]
    answer: tuple[int, ...]
    paragraph_ends: tuple[int, ...] = field(default=())

    def __post_init__(self):
        ends = self.paragraph_ends
        if ends:
            if any(b <= a for a, b in zip(ends, ends[1:])):
                raise ValueError("paragraph_ends must be strictly increasing")
            if ends[0] < 0 or ends[-1] != len(self.reasoning) - 1:
                raise ValueError("paragraph_ends must cover the reasoning span")
        elif self.reasoning:
            raise ValueError("non-empty reasoning requires paragraph_ends")

    def validate_markers(self, markers: MarkerSet) -> None:
        """Check that every non-final paragraph end sits on a delimiter token."""
        last = len(self.reasoning) - 1
        for idx in self.paragraph_ends:
            tok = self.reasoning[idx]
            if tok not in markers.step_split_paragraph and idx != last:
                raise ValueError(f"paragraph end {idx} is not a delimiter token")

    @classmethod
    def from_spans(
        cls,
        prompt: Sequence[int],
        reasoning: Sequence[int],
        answer: Sequence[int],
        markers: MarkerSet,
    ) -> "ReasoningTrace":
        ends = tuple(segment_paragraphs(reasoning, markers)) if len(reasoning) else ()
        return cls(
            prompt=tuple(prompt),
            reasoning=tuple(reasoning),
            answer=tuple(answer),
            paragraph_ends=ends,
        )
