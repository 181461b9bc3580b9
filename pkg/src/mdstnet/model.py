"""Network assembly: configuration, parameter tree, forward pass, heads, loss."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import kernel as K
from .decoder import compress_forecast, decode, init_decoder
from .embedding import embed_all, init_embedding
from .encoder import encode, init_encoder_layer
from .exceptions import ConfigError, DimensionError, NumericError


@dataclass
class ModelConfig:
    """Architecture hyperparameters.

    Defaults follow the published setup where one exists (depth 3,
    distilled tokens 50/3/1, D=256, T=24, tau=48); head count is our pick.
    """

    n_pollutants: int = 3
    n_mete: int = 6
    history: int = 24
    horizon: int = 48
    d_model: int = 256
    depth: int = 3
    decoder_depth: int | None = None
    heads: int = 4
    spa_tokens: int = 50
    pva_tokens: int = 3
    mva_tokens: int = 1
    dropout: float = 0.0
    post_norm: bool = False
    full_attention: bool = False
    disable_spa: bool = False
    disable_pva: bool = False
    disable_mva: bool = False
    zero_forecast: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        positive = ("n_pollutants", "n_mete", "history", "horizon", "d_model", "heads",
                    "spa_tokens", "pva_tokens", "mva_tokens")
        for name in positive:
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.depth < 1 or (self.decoder_depth is not None and self.decoder_depth < 1):
            raise ConfigError("encoder and decoder depth must be >= 1")
        if self.d_model % 4:
            raise ConfigError(f"d_model must be a multiple of 4, got {self.d_model}")
        if self.d_model % self.heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")

    @property
    def dec_depth(self):
        return self.depth if self.decoder_depth is None else self.decoder_depth

    @property
    def disabled_branches(self):
        return tuple(b for b in ("spa", "pva", "mva") if getattr(self, f"disable_{b}"))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def init_params(cfg, seed=0, dtype=None):
    """Build the parameter tree for ``cfg`` (Xavier weights, zero biases).

    Encoder branch output projections are scaled by 1/sqrt(#enabled branches).
    """
    rng = np.random.default_rng(seed)
    with K.precision(dtype or K.default_dtype()):
        D = cfg.d_model
        params = {
            "embed": init_embedding(rng, cfg.history, cfg.horizon, D),
            "encoder": [
                init_encoder_layer(rng, D, cfg.heads, cfg.spa_tokens, cfg.pva_tokens,
                                   cfg.mva_tokens, cfg.full_attention)
                for _ in range(cfg.depth)
            ],
            "decoder": init_decoder(rng, D, cfg.heads, cfg.n_pollutants, cfg.dec_depth),
            "pred_head": K.init_mlp(rng, [D, D, cfg.horizon]),
            "recon_head": K.init_mlp(rng, [D, D, cfg.history]),
        }
        # keep the initial variance of the summed branch update independent of
        # how many branches are enabled
        active = 3 - len(cfg.disabled_branches)
        if active > 1:
            for layer in params["encoder"]:
                for branch in layer.values():
                    out = branch["refine"]["o"] if "refine" in branch else branch["o"]
                    out[0].data *= active ** -0.5
        if cfg.post_norm:
            params["post_norms"] = [
                (K.parameter(np.ones(D)), K.parameter(np.zeros(D))) for _ in range(cfg.depth)
            ]
    return params


def named_parameters(tree, prefix=""):
    """Flatten a parameter tree into ``[(dotted.name, Tensor), ...]``."""
    out = []
    if isinstance(tree, K.Tensor):
        return [(prefix, tree)]
    if isinstance(tree, dict):
        for key, value in tree.items():
            out += named_parameters(value, f"{prefix}.{key}" if prefix else str(key))
    elif isinstance(tree, (list, tuple)):
        for i, value in enumerate(tree):
            if value is not None:
                out += named_parameters(value, f"{prefix}.{i}" if prefix else str(i))
    return out


def parameters(tree):
    return [t for _, t in named_parameters(tree)]


def state_dict(tree):
    return {name: t.data.copy() for name, t in named_parameters(tree)}


def load_state_dict(tree, state):
    named = dict(named_parameters(tree))
    missing = set(named) - set(state)
    extra = set(state) - set(named)
    if missing or extra:
        raise ConfigError(f"parameter mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
    for name, t in named.items():
        if state[name].shape != t.shape:
            raise DimensionError(f"{name}: stored {state[name].shape} vs model {t.shape}")
        t.data = np.asarray(state[name], dtype=t.dtype).copy()
    return tree


def predict_head(H_dec, layers):
    """Per-token MLP ``D -> tau``; no output activation."""
    return K.mlp_forward(H_dec, layers)


def reconstruct_head(H_enc, layers):
    """Per-token MLP ``D -> T`` with its own parameters."""
    return K.mlp_forward(H_enc, layers)


def _dropout(x, rate, rng):
    if not rate or rng is None:
        return x
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return K.mul(x, K.Tensor(mask, dtype=x.dtype))


def forward(params, cfg, x_hist, y_hist, y_fcst, coords, rng=None, record=False):
    """Run the network on ``(..., N, C, length)`` inputs.

    Returns ``(forecast, reconstruction)`` shaped ``(..., N, C_a, tau)`` and
    ``(..., N, C_a, T)``. ``rng`` enables dropout when ``cfg.dropout > 0``.
    """
    dtype = params["pred_head"][0][0].dtype
    arrays = [np.asarray(a, dtype=dtype) for a in (x_hist, y_hist, y_fcst)]
    if arrays[0].shape[-2] != cfg.n_pollutants or arrays[1].shape[-2] != cfg.n_mete:
        raise DimensionError(
            f"expected {cfg.n_pollutants} pollutant / {cfg.n_mete} meteorology channels, "
            f"got {arrays[0].shape[-2]} / {arrays[1].shape[-2]}"
        )
    if arrays[2].shape[-2] != cfg.n_mete:
        raise DimensionError("forecast channels must match meteorology channels")
    for a in arrays:
        if not np.isfinite(a).all():
            raise NumericError("non-finite model input")
    emb = embed_all(*arrays, coords, params["embed"])
    H = _dropout(emb.H, cfg.dropout, rng)
    H_enc = encode(H, emb.E, params["encoder"], cfg.disabled_branches,
                   params.get("post_norms"), tag="enc" if record else None)
    prompts = compress_forecast(emb.Z, params["decoder"]["prompt"],
                                "dec.prompt" if record else None)
    if cfg.zero_forecast:
        prompts = K.Tensor(np.zeros(prompts.shape, dtype=dtype))
    H_dec = decode(prompts, H_enc, params["decoder"]["layers"], tag="dec" if record else None)
    H_dec = _dropout(H_dec, cfg.dropout, rng)
    return predict_head(H_dec, params["pred_head"]), reconstruct_head(H_enc, params["recon_head"])


def _series_mse(pred, target, per_step):
    target = K.as_tensor(np.asarray(target, dtype=pred.dtype))
    if pred.shape != target.shape:
        raise DimensionError(f"loss: prediction {pred.shape} vs target {target.shape}")
    if np.isnan(target.data).any() or np.isnan(pred.data).any():
        raise NumericError("loss: NaN in inputs")
    sq = K.square(K.sub(pred, target))
    per_series = K.sum_(sq, axis=-1)
    if per_step:
        per_series = K.mul(per_series, 1.0 / pred.shape[-1])
    return K.mean(per_series)


def loss_terms(pred_future, true_future, pred_history, true_history, per_step=True):
    """Return ``(total, prediction_term, reconstruction_term)``.

    Each term averages the squared error norm of every (station, channel)
    series; ``per_step=True`` further divides by the series length so both
    terms sit on the same scale.
    """
    lp = _series_mse(pred_future, true_future, per_step)
    lr = _series_mse(pred_history, true_history, per_step)
    return K.add(lp, lr), lp, lr


def loss_total(pred_future, true_future, pred_history, true_history, per_step=True):
    return loss_terms(pred_future, true_future, pred_history, true_history, per_step)[0]
