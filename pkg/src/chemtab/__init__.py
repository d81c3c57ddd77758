"""ChemTab: jointly learned linear progress variables and neural source-term
regressors for tabulated combustion chemistry, with a desk-scale flamelet
generator, reference baselines and a fast lookup runtime."""

from __future__ import annotations

__version__ = "0.1.0"

from .dataset import FlameletDataset, OutputScaler, fit_scaler, load_dataset, save_dataset, split_train_val
from .errors import (
    ChemTabError,
    ConfigError,
    IntegrityError,
    NumericalError,
    SolverError,
    TrainingError,
    UnsupportedVersionError,
    UsageError,
    ValidationError,
)
from .model import ChemTabModel, TrainConfig, build_model, encode, fit, joint_loss, predict, train

__all__ = [
    "__version__",
    "FlameletDataset", "OutputScaler", "fit_scaler", "load_dataset", "save_dataset", "split_train_val",
    "ChemTabError", "ConfigError", "IntegrityError", "NumericalError", "SolverError", "TrainingError",
    "UnsupportedVersionError", "UsageError", "ValidationError",
    "ChemTabModel", "TrainConfig", "build_model", "encode", "fit", "joint_loss", "predict", "train",
]
