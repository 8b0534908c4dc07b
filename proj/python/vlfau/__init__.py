"""Facial action unit recognition with per-AU and whole-face caption generation."""

import json

from ._core import (
    ConfigError,
    IoError,
    NumericError,
    Recognizer,
    compute_class_weights,
    f1_frame,
    fau_loss,
    in_top_k,
    load_image,
    train,
)
from ._core import resolve_config as _resolve_config
from ._core import synthesize as _synthesize


def resolve_config(file="", overrides=()):
    """Effective run configuration as a dict: defaults, then `file`, then `overrides`."""
    return json.loads(_resolve_config(file, list(overrides)))


def synthesize(out_dir, seed=0, overrides=()):
    """Generate a synthetic dataset in `out_dir` and return its manifest."""
    return json.loads(_synthesize(str(out_dir), seed, list(overrides)))


__all__ = [
    "ConfigError",
    "IoError",
    "NumericError",
    "Recognizer",
    "compute_class_weights",
    "f1_frame",
    "fau_loss",
    "in_top_k",
    "load_image",
    "resolve_config",
    "synthesize",
    "train",
]
