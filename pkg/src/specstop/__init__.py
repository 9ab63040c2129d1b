"""specstop: speculative decoding with signal-gated early exit of reasoning."""

from .engine import GenerationResult, GenerationSession, generate
from .heads import DraftHead, SignalPrediction, SignalTriple, decode_signals, head_project
from .models import TableDraft, TableModel, greedy_decode
from .stopping import SmoothingMethod, StoppingConfig, should_exit
from .tiny import ReuseDraft, TinyConfig, TinyTransformer
from .tokens import MarkerSet, ReasoningTrace, Vocabulary, segment_paragraphs, toy_vocabulary

__version__ = "0.1.0"

__all__ = [
    "DraftHead",
    "GenerationResult",
    "GenerationSession",
    "MarkerSet",
    "ReasoningTrace",
    "ReuseDraft",
    "SignalPrediction",
    "SignalTriple",
    "SmoothingMethod",
    "StoppingConfig",
    "TableDraft",
    "TableModel",
    "TinyConfig",
    "TinyTransformer",
    "Vocabulary",
    "decode_signals",
    "generate",
    "greedy_decode",
    "head_project",
    "segment_paragraphs",
    "should_exit",
    "toy_vocabulary",
]
