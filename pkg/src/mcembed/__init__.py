"""Multiclass conditional embeddings with complexity-bounded hyperparameter learning."""

__version__ = "0.1.0"

from .data import Dataset, load_csv, load_idx
from .kernels import gaussian_ard, gaussian_iso, linear_features
from .model import (
    ExplicitFittedMCE,
    FittedMCE,
    clip_normalize,
    fit,
    fit_explicit,
    predict_label,
    predict_proba,
    rcb,
)
from .objective import LossConfig, grad_objective
from .optimize import TrainConfig, train, train_explicit

__all__ = [
    "Dataset", "load_csv", "load_idx",
    "gaussian_ard", "gaussian_iso", "linear_features",
    "ExplicitFittedMCE", "FittedMCE", "clip_normalize", "fit", "fit_explicit",
    "predict_label", "predict_proba", "rcb",
    "LossConfig", "grad_objective",
    "TrainConfig", "train", "train_explicit",
]
