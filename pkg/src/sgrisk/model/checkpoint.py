"""JSON checkpoints: configuration, vocabulary and exact parameter values."""
from __future__ import annotations

import json

import numpy as np

from .batch import VocabularyError
from .network import ModelConfig, RiskModel

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model: RiskModel, metadata=None):
    payload = {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "vocab": list(model.config.vocab),
        "params": {name: {"shape": list(t.shape), "values": t.data.ravel().tolist()}
                   for name, t in model.params.items()},
        "metadata": metadata or {},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_checkpoint(path, expected_vocab=None):
    """Returns (model, metadata). Floats round-trip exactly through JSON."""
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {payload.get('format_version')!r}")
    config = ModelConfig.from_dict(payload["config"])
    if expected_vocab is not None and tuple(expected_vocab) != config.vocab:
        raise VocabularyError(f"checkpoint vocabulary {list(config.vocab)} does not match "
                              f"{list(expected_vocab)}")
    model = RiskModel(config)
    stored = payload["params"]
    if set(stored) != set(model.params.names()):
        missing = sorted(set(model.params.names()) ^ set(stored))
        raise CheckpointError(f"{path}: parameter names differ: {missing[:5]}")
    for name, t in model.params.items():
        entry = stored[name]
        arr = np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
        if arr.shape != t.shape:
            raise CheckpointError(f"{path}: {name} has shape {arr.shape}, expected {t.shape}")
        t.data[...] = arr
    return model, payload.get("metadata", {})
