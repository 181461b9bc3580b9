"""Meteorology-guided, modality-decoupled spatio-temporal air quality forecasting.

Everything runs on a small numpy reverse-mode autodiff kernel
(:mod:`mdstnet.kernel`). The estimator front end follows scikit-learn
conventions.
"""

from .data import Dataset, Windows, load_dataset, save_dataset, split_chronological
from .estimator import HistoricalAverage, MDSTNetForecaster, Persistence
from .exceptions import (ConfigError, DataError, DimensionError, DivergenceError, FormatError,
                         MDSTNetError, NumericError)
from .model import ModelConfig
from .synthetic import SynthConfig, gen_synthetic
from .training import MetricsReport, TrainConfig, evaluate

__version__ = "0.1.0"

__all__ = [
    "Dataset", "Windows", "load_dataset", "save_dataset", "split_chronological",
    "MDSTNetForecaster", "HistoricalAverage", "Persistence", "ModelConfig", "TrainConfig",
    "SynthConfig", "gen_synthetic", "MetricsReport", "evaluate", "MDSTNetError",
    "ConfigError", "DataError", "DimensionError", "DivergenceError", "FormatError",
    "NumericError",
]
