"""Prototype-based distance-aware uncertainty for single forward-pass classifiers."""

from .baselines import Ensemble, SoftmaxModel, deep_ensemble, mc_dropout_predict, softmax_uncertainty, train_softmax
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Dataset, gen_blobs, gen_ood_ring, gen_two_moons, load_csv, save_csv, split
from .estimators import DDARClassifier, DeepEnsembleClassifier, MCDropoutClassifier, SoftmaxClassifier
from .exceptions import (
    CheckpointError,
    ContractError,
    DataError,
    DDARError,
    DegenerateInputError,
    DimensionError,
    DomainError,
    NumericError,
)
from .losses import LossBreakdown, total_loss
from .metrics import EvalReport, auroc, collapse_score, ece, evaluate, pca2, uncertainty_grid
from .model import DdarModel, ExtractorConfig, feature_extract, forward, init_model, predict
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "CheckpointError", "ContractError", "DDARClassifier", "DDARError", "DataError", "Dataset",
    "DdarModel", "DeepEnsembleClassifier", "DegenerateInputError", "DimensionError", "DomainError",
    "Ensemble", "EvalReport", "ExtractorConfig", "LossBreakdown", "MCDropoutClassifier", "NumericError",
    "SoftmaxClassifier", "SoftmaxModel", "TrainConfig", "auroc", "collapse_score", "deep_ensemble",
    "ece", "evaluate", "feature_extract", "forward", "gen_blobs", "gen_ood_ring", "gen_two_moons",
    "init_model", "load_checkpoint", "load_csv", "mc_dropout_predict", "pca2", "predict",
    "save_checkpoint", "save_csv", "softmax_uncertainty", "split", "total_loss", "train",
    "train_softmax", "uncertainty_grid",
]
