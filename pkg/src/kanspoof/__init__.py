"""Kanformer anti-spoofing classifier on precomputed feature sequences."""

from .config import ExperimentConfig
from .kanformer import ModelConfig, build_model, classify
from .metrics import ScoreSet, TdcfParams, compute_eer, compute_min_tdcf

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig",
    "ModelConfig",
    "ScoreSet",
    "TdcfParams",
    "build_model",
    "classify",
    "compute_eer",
    "compute_min_tdcf",
]
