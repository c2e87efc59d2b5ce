"""Attention-based feature upsampler (C++ core)."""

from ._core import (
    Error,
    Model,
    adcc,
    avg_drop,
    avg_gain,
    avg_increase,
    coherency,
    complexity,
    encode,
    feature_resize,
    read_features,
    recon_score,
    run_cli,
    synth_image,
    write_features,
)

__all__ = [
    "Error",
    "Model",
    "adcc",
    "avg_drop",
    "avg_gain",
    "avg_increase",
    "coherency",
    "complexity",
    "encode",
    "feature_resize",
    "read_features",
    "recon_score",
    "run_cli",
    "synth_image",
    "write_features",
]
