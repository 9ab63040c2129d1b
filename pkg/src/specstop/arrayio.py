"""Checkpoint format: JSON of named float arrays with shape headers."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT_TAG = "specstop-arrays-v1"


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    payload = {
        "format": FORMAT_TAG,
        "meta": meta or {},
        "arrays": {
            name: {"shape": list(arr.shape), "data": np.asarray(arr, dtype=np.float64).ravel().tolist()}
            for name, arr in arrays.items()
        },
    }
    Path(path).write_text(json.dumps(payload))


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != FORMAT_TAG:
        raise ValueError(f"not a {FORMAT_TAG} checkpoint: {path}")
    arrays = {
        name: np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in payload["arrays"].items()
    }
    return arrays, payload.get("meta", {})
