"""Training loop, forecast metrics and the two reference baselines."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import kernel as K
from .exceptions import ConfigError, DimensionError, DivergenceError, NumericError
from .model import (forward, init_params, loss_terms, loss_total, parameters,
                    predict_head, reconstruct_head)

__all__ = [
    "TrainConfig", "MetricsReport", "train", "evaluate", "default_bands",
    "baseline_ha", "baseline_persistence", "predict_head", "reconstruct_head",
    "loss_total", "loss_terms", "predict_windows", "full_gradcheck",
]

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 5e-4
    epochs: int = 30
    batch_size: int = 4
    seed: int = 0
    precision: str = "float32"
    paper_loss: bool = False  # squared norm per series, not divided by its length
    standardize: bool = True
    stride: int = 1
    restore_best: bool = True  # keep the epoch with the lowest validation loss

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.lr >= 0 or not math.isfinite(self.lr):
            raise ConfigError(f"lr must be a finite non-negative number, got {self.lr}")
        if self.epochs < 1 or self.batch_size < 1 or self.stride < 1:
            raise ConfigError("epochs, batch_size and stride must be >= 1")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, got {self.precision!r}")

    @property
    def dtype(self):
        return np.float64 if self.precision == "float64" else np.float32

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainResult:
    params: dict
    epochs: list = field(default_factory=list)  # per-epoch dicts
    steps: list = field(default_factory=list)  # per-step total loss
    best_epoch: int | None = None  # epoch whose parameters were kept, if restored


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _eval_loss(params, cfg, windows, coords, batch_size, per_step):
    total, count = 0.0, 0
    with K.no_grad():
        for start in range(0, len(windows), batch_size):
            idx = np.arange(start, min(start + batch_size, len(windows)))
            xh, yh, yf, xf = windows.batch(idx)
            pred, rec = forward(params, cfg, xh, yh, yf, coords)
            total += float(loss_total(pred, xf, rec, xh, per_step).data) * len(idx)
            count += len(idx)
    return total / max(count, 1)


def train(windows, model_cfg, train_cfg, val_windows=None, params=None, callback=None):
    """Fit the network with Adam on shuffled minibatches.

    ``windows`` supplies ``batch(idx)`` arrays and ``coords``; it should
    already be standardised. With ``val_windows`` and
    ``train_cfg.restore_best`` the parameters of the epoch with the lowest
    validation loss are kept. Raises :class:`DivergenceError` on a
    non-finite loss. Deterministic for a fixed ``train_cfg.seed``.
    """
    if len(windows) == 0:
        raise ConfigError("no training windows")
    dtype = train_cfg.dtype
    if params is None:
        params = init_params(model_cfg, seed=train_cfg.seed, dtype=dtype)
    plist = parameters(params)
    opt = K.Adam(plist, lr=train_cfg.lr)
    rng = np.random.default_rng(train_cfg.seed)
    drop_rng = np.random.default_rng(train_cfg.seed + 1) if model_cfg.dropout else None
    per_step = not train_cfg.paper_loss
    result = TrainResult(params)
    coords = windows.coords
    best = None
    for epoch in range(train_cfg.epochs):
        sums = np.zeros(3)
        seen = 0
        for step, idx in enumerate(_batches(len(windows), train_cfg.batch_size, rng)):
            xh, yh, yf, xf = windows.batch(idx)
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    pred, rec = forward(params, model_cfg, xh, yh, yf, coords, rng=drop_rng)
                    total, lp, lr = loss_terms(pred, xf, rec, xh, per_step)
            except NumericError as exc:
                raise DivergenceError(f"epoch {epoch + 1}, step {step + 1}: {exc}") from exc
            value = float(total.data)
            if not math.isfinite(value):
                raise DivergenceError(
                    f"loss became {value} at epoch {epoch + 1}, step {step + 1} "
                    f"(prediction {float(lp.data)}, reconstruction {float(lr.data)})"
                )
            opt.zero_grad()
            total.backward()
            opt.step()
            result.steps.append(value)
            sums += np.array([value, float(lp.data), float(lr.data)]) * len(idx)
            seen += len(idx)
        record = {"epoch": epoch + 1, "train_loss": sums[0] / seen,
                  "pred_loss": sums[1] / seen, "recon_loss": sums[2] / seen}
        if val_windows is not None and len(val_windows):
            record["val_loss"] = _eval_loss(params, model_cfg, val_windows, coords,
                                            max(train_cfg.batch_size, 32), per_step)
        if train_cfg.restore_best and "val_loss" in record:
            if best is None or record["val_loss"] < best[0]:
                best = (record["val_loss"], epoch + 1, [p.data.copy() for p in plist])
        result.epochs.append(record)
        log.info("epoch %d: %s", epoch + 1, record)
        if callback is not None:
            callback(record)
    if best is not None:
        for p, data in zip(plist, best[2]):
            p.data = data
        result.best_epoch = best[1]
    return result


# Central differences on the full loss lose about |loss| * 1e-16 / eps to
# roundoff; 1e-4 keeps that well below the smallest gradients at init.
FULL_MODEL_EPS = 1e-4


def full_gradcheck(model_cfg, seed=0, n_stations=4, eps=FULL_MODEL_EPS, per_step=True):
    """Max relative gradient error of the full loss over every parameter, in float64.

    Inputs and targets are standard normal draws; parameters use the
    regular initialisation for ``seed``.
    """
    from .embedding import StationCoords

    rng = np.random.default_rng(seed)
    lead = (n_stations,)
    x_hist = rng.normal(size=lead + (model_cfg.n_pollutants, model_cfg.history))
    y_hist = rng.normal(size=lead + (model_cfg.n_mete, model_cfg.history))
    y_fcst = rng.normal(size=lead + (model_cfg.n_mete, model_cfg.horizon))
    x_fut = rng.normal(size=lead + (model_cfg.n_pollutants, model_cfg.horizon))
    coords = StationCoords(rng.uniform(20, 45, n_stations), rng.uniform(100, 125, n_stations))
    with K.precision(np.float64):
        params = init_params(model_cfg, seed=seed, dtype=np.float64)

        def loss():
            pred, rec = forward(params, model_cfg, x_hist, y_hist, y_fcst, coords)
            return loss_total(pred, x_fut, rec, x_hist, per_step)

        return K.grad_check(loss, parameters(params), eps=eps)


def predict_windows(params, cfg, windows, batch_size=64):
    """Forecasts for every window, shaped (S, N, C_a, tau)."""
    out = []
    with K.no_grad():
        for start in range(0, len(windows), batch_size):
            idx = np.arange(start, min(start + batch_size, len(windows)))
            xh, yh, yf, _ = windows.batch(idx)
            pred, _ = forward(params, cfg, xh, yh, yf, windows.coords)
            out.append(pred.data)
    return np.concatenate(out, axis=0)


# ---------------------------------------------------------------------------
# metrics


STANDARD_BANDS = ((1, 12), (13, 24), (25, 48))


def default_bands(horizon):
    """Standard 1-12h / 13-24h / 25-48h bands clipped to ``horizon``, plus the whole range."""
    bands = []
    for lo, hi in STANDARD_BANDS:
        if lo <= horizon:
            hi = min(hi, horizon)
            bands.append((f"{lo}-{hi}h", lo, hi))
    full = (f"1-{horizon}h", 1, horizon)
    if full not in bands:
        bands.append(full)
    return bands


@dataclass
class MetricsReport:
    """MAE/RMSE per horizon band and target variate (plus ``all``)."""

    values: dict  # {(band, variate, metric): value}
    n_samples: int
    bands: list
    variates: list

    def get(self, band, variate="all", metric="MAE"):
        return self.values[(band, variate, metric)]

    def rows(self):
        return [(b, v, m, x) for (b, v, m), x in self.values.items()]

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["band", "variate", "metric", "value"])
            for row in self.rows():
                w.writerow([*row[:3], repr(float(row[3]))])

    def to_dict(self):
        return {
            "n_samples": self.n_samples,
            "bands": [list(b) for b in self.bands],
            "variates": self.variates,
            "metrics": [{"band": b, "variate": v, "metric": m, "value": float(x)}
                        for b, v, m, x in self.rows()],
        }

    def to_json(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1)

    @classmethod
    def from_dict(cls, d):
        values = {(r["band"], r["variate"], r["metric"]): r["value"] for r in d["metrics"]}
        return cls(values, d["n_samples"], [tuple(b) for b in d["bands"]], d["variates"])


def evaluate(preds, truth, bands=None, variates=None):
    """MAE and RMSE per band and variate over all stations and windows.

    ``preds``/``truth`` are (N, C, tau) or (S, N, C, tau). Bands are
    ``(label, first, last)`` with 1-based inclusive lead times.
    """
    preds = np.asarray(preds, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if preds.shape != truth.shape:
        raise DimensionError(f"preds {preds.shape} vs truth {truth.shape}")
    if preds.ndim == 3:
        preds, truth = preds[None], truth[None]
    if preds.ndim != 4:
        raise DimensionError(f"expected (S, N, C, tau) arrays, got {preds.shape}")
    horizon = preds.shape[-1]
    bands = default_bands(horizon) if bands is None else [tuple(b) for b in bands]
    n_var = preds.shape[2]
    variates = list(variates) if variates is not None else [f"aq{i}" for i in range(n_var)]
    if len(variates) != n_var:
        raise DimensionError(f"{len(variates)} variate names for {n_var} channels")
    err = preds - truth
    values = {}
    for label, lo, hi in bands:
        if lo < 1 or hi > horizon or hi < lo:
            raise ConfigError(f"band {label} ({lo}..{hi}) is empty or outside 1..{horizon}")
        e = err[..., lo - 1:hi]
        for c, name in enumerate(variates):
            ec = e[:, :, c]
            values[(label, name, "MAE")] = float(np.abs(ec).mean())
            values[(label, name, "RMSE")] = float(np.sqrt((ec * ec).mean()))
        values[(label, "all", "MAE")] = float(np.abs(e).mean())
        values[(label, "all", "RMSE")] = float(np.sqrt((e * e).mean()))
    return MetricsReport(values, preds.shape[0], bands, variates)


# ---------------------------------------------------------------------------
# baselines


def _history(sample, horizon):
    if hasattr(sample, "x_hist"):
        return np.asarray(sample.x_hist), sample.x_fut.shape[-1] if horizon is None else horizon
    if horizon is None:
        raise ConfigError("horizon is required when passing a bare history array")
    return np.asarray(sample), horizon


def baseline_ha(sample, horizon=None):
    """Window mean of the history, repeated over the horizon.

    ``sample`` is a :class:`~mdstnet.data.Sample`/windows object or a
    history array ``(..., T)``.
    """
    x_hist, horizon = _history(sample, horizon)
    mean = x_hist.mean(axis=-1, keepdims=True)
    return np.repeat(mean, horizon, axis=-1)


def baseline_persistence(sample, horizon=None):
    """Last observed value, repeated over the horizon."""
    x_hist, horizon = _history(sample, horizon)
    return np.repeat(x_hist[..., -1:], horizon, axis=-1)
