"""Signal smoothing and the threshold-gated stop decision.

Five smoothing modes are supported: none, EWMA, sliding-window mean,
momentum extrapolation, and per-paragraph mean. Each is applied
independently to the confidence, progress, and remaining streams.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path

from .heads import SignalTriple
from .tokens import MarkerMode

SIGNAL_NAMES = ("confidence", "progress", "remaining")


@dataclass(frozen=True)
class SmoothingMethod:
    kind: str = "ewma"
    alpha: float = 0.1
    window: int = 10

    def __post_init__(self):
        if self.kind not in ("none", "ewma", "sliding_window", "momentum", "paragraph_mean"):
            raise ValueError(f"unknown smoothing kind: {self.kind!r}")
        if self.kind == "ewma" and not 0.0 < self.alpha <= 1.0:
            raise ValueError("ewma alpha must be in (0, 1]")
        if self.kind == "sliding_window" and self.window < 1:
            raise ValueError("sliding window size must be >= 1")
        if self.kind == "momentum" and self.window < 2:
            raise ValueError("momentum window must be >= 2")


class SignalSmoother:
    """Streaming smoother for one scalar signal."""

    def __init__(self, method: SmoothingMethod):
        self.method = method
        self._ewma: float | None = None
        self._buffer: deque[float] = deque(maxlen=max(method.window, 1))
        self._para_sum = 0.0
        self._para_count = 0

    def update(self, raw: float) -> float:
        kind = self.method.kind
        if kind == "none":
            return raw
        if kind == "ewma":
            a = self.method.alpha
            self._ewma = raw if self._ewma is None else a * raw + (1.0 - a) * self._ewma
            return self._ewma
        if kind == "sliding_window":
            self._buffer.append(raw)
            return sum(self._buffer) / len(self._buffer)
        if kind == "momentum":
            self._buffer.append(raw)
            if len(self._buffer) < 2:
                return raw
            first = self._buffer[0]
            last = self._buffer[-1]
            return last + (last - first) / (len(self._buffer) - 1)
        # paragraph_mean
        self._para_sum += raw
        self._para_count += 1
        return self._para_sum / self._para_count

    def on_paragraph_boundary(self) -> None:
        self._para_sum = 0.0
        self._para_count = 0


class TripleSmoother:
    """Per-signal smoothers for a stream of SignalTriples."""

    def __init__(self, method: SmoothingMethod):
        self.method = method
        self._parts = [SignalSmoother(method) for _ in SIGNAL_NAMES]

    def update(self, raw: SignalTriple) -> SignalTriple:
        return SignalTriple(
            confidence=self._parts[0].update(raw.confidence),
            progress=self._parts[1].update(raw.progress),
            remaining=self._parts[2].update(raw.remaining),
        )

    def on_paragraph_boundary(self) -> None:
        for part in self._parts:
            part.on_paragraph_boundary()


@dataclass(frozen=True)
class StoppingConfig:
    """Thresholds, enabled signal gates, smoothing, and the split-token mode.

    ``should_exit`` requires every enabled gate to pass: confidence and
    progress must exceed their thresholds, remaining must fall below its
    threshold (a token count, compared on the decoded scale).
    """

    tau_confidence: float = 0.8
    tau_progress: float = 0.3
    tau_remaining: float = 200.0
    enabled: frozenset[str] = frozenset(SIGNAL_NAMES)
    smoothing: SmoothingMethod = field(default_factory=SmoothingMethod)
    marker_mode: MarkerMode = "paragraph"

    def __post_init__(self):
        if not self.enabled:
            raise ValueError("at least one signal gate must be enabled")
        unknown = set(self.enabled) - set(SIGNAL_NAMES)
        if unknown:
            raise ValueError(f"unknown signals enabled: {sorted(unknown)}")
        if not 0.0 <= self.tau_confidence <= 1.0 or not 0.0 <= self.tau_progress <= 1.0:
            raise ValueError("confidence/progress thresholds must be in [0, 1]")
        if self.tau_remaining < 0.0:
            raise ValueError("remaining threshold must be >= 0")

    def make_smoother(self) -> TripleSmoother:
        return TripleSmoother(self.smoothing)


def should_exit(smoothed: SignalTriple, cfg: StoppingConfig) -> bool:
    """True iff every enabled gate passes on the smoothed signals."""
    if "confidence" in cfg.enabled and not smoothed.confidence > cfg.tau_confidence:
        return False
    if "progress" in cfg.enabled and not smoothed.progress > cfg.tau_progress:
        return False
    if "remaining" in cfg.enabled and not smoothed.remaining < cfg.tau_remaining:
        return False
    return True


def combined_config(**overrides) -> StoppingConfig:
    """The default combined gate: conf > 0.8, prog > 0.3, remaining < 200, EWMA(0.1)."""
    return replace(StoppingConfig(), **overrides)


def confidence_only(tau: float = 0.9, **overrides) -> StoppingConfig:
    return replace(
        StoppingConfig(tau_confidence=tau, enabled=frozenset({"confidence"})), **overrides
    )


def progress_only(tau: float = 0.8, **overrides) -> StoppingConfig:
    return replace(
        StoppingConfig(tau_progress=tau, enabled=frozenset({"progress"})), **overrides
    )


def remaining_only(tau: float = 100.0, **overrides) -> StoppingConfig:
    return replace(
        StoppingConfig(tau_remaining=tau, enabled=frozenset({"remaining"})), **overrides
    )


def config_to_dict(cfg: StoppingConfig) -> dict:
    return {
        "smoothing": {
            "kind": cfg.smoothing.kind,
            "alpha": cfg.smoothing.alpha,
            "window": cfg.smoothing.window,
        },
        "thresholds": {
            "confidence": cfg.tau_confidence,
            "progress": cfg.tau_progress,
            "remaining": cfg.tau_remaining,
        },
        "signals": {"enabled": sorted(cfg.enabled)},
        "markers": {"mode": cfg.marker_mode},
    }


def config_from_dict(data: dict) -> StoppingConfig:
    smoothing = data.get("smoothing", {})
    thresholds = data.get("thresholds", {})
    signals = data.get("signals", {})
    markers = data.get("markers", {})
    defaults = StoppingConfig()
    return StoppingConfig(
        tau_confidence=float(thresholds.get("confidence", defaults.tau_confidence)),
        tau_progress=float(thresholds.get("progress", defaults.tau_progress)),
        tau_remaining=float(thresholds.get("remaining", defaults.tau_remaining)),
        enabled=frozenset(signals.get("enabled", SIGNAL_NAMES)),
        smoothing=SmoothingMethod(
            kind=smoothing.get("kind", "ewma"),
            alpha=float(smoothing.get("alpha", 0.1)),
            window=int(smoothing.get("window", 10)),
        ),
        marker_mode=markers.get("mode", "paragraph"),
    )


def load_config(path) -> StoppingConfig:
    return config_from_dict(json.loads(Path(path).read_text()))


def save_config(path, cfg: StoppingConfig) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2))
