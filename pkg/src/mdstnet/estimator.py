"""scikit-learn style front end: ``fit`` on a Dataset, ``predict`` forecasts.

Hyperparameters are plain constructor arguments so ``get_params`` /
``set_params`` / ``clone`` work as usual.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from .data import Dataset, Windows, split_chronological
from .exceptions import DataError, DimensionError
from .model import ModelConfig, init_params, load_state_dict, state_dict
from .training import (TrainConfig, baseline_ha, baseline_persistence, evaluate,
                       predict_windows, train)

MODEL_KEYS = tuple(f for f in ModelConfig.__dataclass_fields__ if f not in ("n_pollutants", "n_mete"))
TRAIN_KEYS = tuple(TrainConfig.__dataclass_fields__)


def check_dataset(X):
    """Validate that ``X`` is a :class:`Dataset`."""
    if not isinstance(X, Dataset):
        raise TypeError(f"expected a mdstnet Dataset, got {type(X).__name__}")
    return X


def check_windows(X, history, horizon, stride=1):
    """Accept a Dataset or Windows; return Windows matching ``history``/``horizon``."""
    if isinstance(X, Windows):
        if (X.history, X.horizon) != (history, horizon):
            raise DimensionError(
                f"windows are ({X.history}, {X.horizon}), model expects ({history}, {horizon})"
            )
        return X
    return Windows(check_dataset(X), history, horizon, stride)


class Standardizer:
    """Per-channel z-scoring of pollutant and meteorology blocks."""

    def fit(self, dataset):
        self.aq_mean_ = dataset.aq.mean(axis=(0, 1), dtype=np.float64)
        self.aq_std_ = dataset.aq.std(axis=(0, 1), dtype=np.float64)
        self.mete_mean_ = dataset.mete.mean(axis=(0, 1), dtype=np.float64)
        self.mete_std_ = dataset.mete.std(axis=(0, 1), dtype=np.float64)
        self.aq_std_[self.aq_std_ < 1e-8] = 1.0
        self.mete_std_[self.mete_std_ < 1e-8] = 1.0
        return self

    def transform(self, dataset):
        return Dataset((dataset.aq - self.aq_mean_) / self.aq_std_,
                       (dataset.mete - self.mete_mean_) / self.mete_std_,
                       dataset.coords, dataset.timestamps, dataset.aq_names,
                       dataset.mete_names, dataset.station_ids)

    def inverse_aq(self, arr):
        """Undo scaling on (..., N, C_a, L) pollutant arrays."""
        return arr * self.aq_std_[:, None] + self.aq_mean_[:, None]

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in
                ("aq_mean_", "aq_std_", "mete_mean_", "mete_std_")}

    @classmethod
    def from_dict(cls, d):
        s = cls()
        for k, v in d.items():
            setattr(s, k, np.asarray(v, dtype=np.float64))
        return s


class _Identity(Standardizer):
    def fit(self, dataset):
        n_a, n_m = dataset.aq.shape[2], dataset.mete.shape[2]
        self.aq_mean_, self.aq_std_ = np.zeros(n_a), np.ones(n_a)
        self.mete_mean_, self.mete_std_ = np.zeros(n_m), np.ones(n_m)
        return self


class MDSTNetForecaster(BaseEstimator):
    """Modality-decoupled spatio-temporal forecaster.

    ``fit(dataset)`` trains on the whole dataset (pass ``validation`` to
    track a held-out loss); ``predict(dataset)`` returns forecasts for
    every window as ``(S, N, C_a, horizon)`` in original units.
    """

    def __init__(self, history=24, horizon=48, d_model=256, depth=3, decoder_depth=None,
                 heads=4, spa_tokens=50, pva_tokens=3, mva_tokens=1, dropout=0.0,
                 post_norm=False, full_attention=False, disable_spa=False,
                 disable_pva=False, disable_mva=False, zero_forecast=False,
                 lr=5e-4, epochs=30, batch_size=4, seed=0, precision="float32",
                 paper_loss=False, standardize=True, stride=1, restore_best=True):
        self.history = history
        self.horizon = horizon
        self.d_model = d_model
        self.depth = depth
        self.decoder_depth = decoder_depth
        self.heads = heads
        self.spa_tokens = spa_tokens
        self.pva_tokens = pva_tokens
        self.mva_tokens = mva_tokens
        self.dropout = dropout
        self.post_norm = post_norm
        self.full_attention = full_attention
        self.disable_spa = disable_spa
        self.disable_pva = disable_pva
        self.disable_mva = disable_mva
        self.zero_forecast = zero_forecast
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.precision = precision
        self.paper_loss = paper_loss
        self.standardize = standardize
        self.stride = stride
        self.restore_best = restore_best

    def model_config(self, n_pollutants, n_mete):
        kw = {k: getattr(self, k) for k in MODEL_KEYS}
        return ModelConfig(n_pollutants=n_pollutants, n_mete=n_mete, **kw)

    def train_config(self):
        return TrainConfig(**{k: getattr(self, k) for k in TRAIN_KEYS})

    def fit(self, X, y=None, validation=None):
        """Train on every window of ``X`` (a Dataset)."""
        X = check_dataset(X)
        self.config_ = self.model_config(X.aq.shape[2], X.mete.shape[2])
        tcfg = self.train_config()
        self.scaler_ = (Standardizer() if tcfg.standardize else _Identity()).fit(X)
        windows = Windows(self.scaler_.transform(X), self.history, self.horizon, tcfg.stride)
        val = None
        if validation is not None:
            val = Windows(self.scaler_.transform(check_dataset(validation)),
                          self.history, self.horizon, 1)
        result = train(windows, self.config_, tcfg, val_windows=val)
        self.params_ = result.params
        self.loss_trace_ = result.epochs
        self.step_losses_ = result.steps
        self.best_epoch_ = result.best_epoch
        self.aq_names_ = list(X.aq_names)
        return self

    def _windows(self, X, stride=1):
        check_is_fitted(self, "params_")
        X = check_dataset(X)
        if X.aq.shape[2] != self.config_.n_pollutants or X.mete.shape[2] != self.config_.n_mete:
            raise DimensionError("dataset channels differ from the fitted model")
        return Windows(self.scaler_.transform(X), self.history, self.horizon, stride)

    def predict(self, X, stride=1):
        """Forecasts ``(S, N, C_a, horizon)`` in the units of the training data."""
        w = self._windows(X, stride)
        return self.scaler_.inverse_aq(predict_windows(self.params_, self.config_, w))

    def evaluate(self, X, stride=1, bands=None):
        """:class:`MetricsReport` of the forecasts on every window of ``X``."""
        preds = self.predict(X, stride)
        truth = Windows(check_dataset(X), self.history, self.horizon, stride).x_fut
        return evaluate(preds, truth, bands, X.aq_names)

    def score(self, X, y=None):
        """Negative 1..horizon MAE (higher is better)."""
        return -self.evaluate(X).get(f"1-{self.horizon}h")

    # persistence of fitted state
    def get_state(self):
        check_is_fitted(self, "params_")
        return {"params": state_dict(self.params_), "scaler": self.scaler_.to_dict(),
                "config": self.config_.to_dict()}

    def set_state(self, state):
        self.config_ = ModelConfig.from_dict(state["config"])
        self.scaler_ = Standardizer.from_dict(state["scaler"])
        self.params_ = load_state_dict(
            init_params(self.config_, dtype=self.train_config().dtype), state["params"])
        return self


class _Baseline(BaseEstimator):
    _rule = None

    def __init__(self, history=24, horizon=48):
        self.history = history
        self.horizon = horizon

    def fit(self, X=None, y=None):
        self.fitted_ = True
        return self

    def predict(self, X, stride=1):
        if not getattr(self, "fitted_", False):
            raise NotFittedError(f"{type(self).__name__} is not fitted")
        w = check_windows(X, self.history, self.horizon, stride)
        return type(self)._rule(w.x_hist, self.horizon)

    def evaluate(self, X, stride=1, bands=None):
        w = check_windows(X, self.history, self.horizon, stride)
        names = w.dataset.aq_names if hasattr(w, "dataset") else None
        return evaluate(self.predict(w), w.x_fut, bands, names)


class HistoricalAverage(_Baseline):
    """Forecast = mean of the history window."""

    _rule = staticmethod(baseline_ha)


class Persistence(_Baseline):
    """Forecast = last observed value."""

    _rule = staticmethod(baseline_persistence)


def fit_predict_split(estimator, dataset, fractions=(0.7, 0.1, 0.2)):
    """Chronological split, fit on train (+val loss), return (estimator, test set)."""
    tr, va, te = split_chronological(dataset, fractions)
    if va.n_time < estimator.history + estimator.horizon:
        va = None
    if te.n_time < estimator.history + estimator.horizon:
        raise DataError("test split shorter than one window")
    estimator.fit(tr, validation=va)
    return estimator, te
