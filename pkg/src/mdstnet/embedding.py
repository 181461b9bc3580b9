"""Series tokenisation and sinusoidal station/variate position codes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernel as K
from .exceptions import ConfigError, DataError, DimensionError


def spatial_pe(lat, lon, d_model):
    """2D sinusoidal code of a station position given in raw degrees.

    Slot ``4i`` holds ``sin(lat / 10000**(2i/D))``, ``4i+1`` the same for
    longitude, ``4i+2``/``4i+3`` the cosines. ``lat``/``lon`` may be
    arrays, in which case a leading axis is added to the result.
    """
    if d_model % 4:
        raise ConfigError(f"spatial_pe needs d_model divisible by 4, got {d_model}")
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    i = np.arange(d_model // 4)
    denom = 10000.0 ** (2 * i / d_model)
    out = np.empty(lat.shape + (d_model,))
    out[..., 0::4] = np.sin(lat[..., None] / denom)
    out[..., 1::4] = np.sin(lon[..., None] / denom)
    out[..., 2::4] = np.cos(lat[..., None] / denom)
    out[..., 3::4] = np.cos(lon[..., None] / denom)
    return out


def variate_pe(channel, d_model):
    """Vanilla transformer encoding of an integer channel position."""
    if d_model % 2:
        raise ConfigError(f"variate_pe needs an even d_model, got {d_model}")
    c = np.asarray(channel, dtype=np.float64)
    i = np.arange(d_model // 2)
    angle = c[..., None] / 10000.0 ** (2 * i / d_model)
    out = np.empty(c.shape + (d_model,))
    out[..., 0::2] = np.sin(angle)
    out[..., 1::2] = np.cos(angle)
    return out


@dataclass
class StationCoords:
    """Latitude/longitude in degrees, one row per station."""

    lat: np.ndarray
    lon: np.ndarray

    def __post_init__(self):
        self.lat = np.asarray(self.lat, dtype=np.float64).reshape(-1)
        self.lon = np.asarray(self.lon, dtype=np.float64).reshape(-1)
        if self.lat.shape != self.lon.shape:
            raise DataError("latitude and longitude arrays differ in length")
        if not (np.isfinite(self.lat).all() and np.isfinite(self.lon).all()):
            raise DataError("station coordinates must be finite")
        if np.abs(self.lat).max(initial=0) > 90 or np.abs(self.lon).max(initial=0) > 180:
            raise DataError("station coordinates out of range")

    def __len__(self):
        return self.lat.size

    def take(self, order):
        return StationCoords(self.lat[order], self.lon[order])

    def as_array(self):
        return np.stack([self.lat, self.lon], axis=1)


@dataclass
class EmbeddedState:
    H: K.Tensor  # pollutant tokens  (..., N, C_a, D)
    E: K.Tensor  # meteorology tokens (..., N, C_m, D)
    Z: K.Tensor  # forecast tokens    (..., N, C_m, D)


def init_embedding(rng, history, horizon, d_model):
    """Three independent one-hidden-layer MLPs, one per input modality."""
    return {
        "aq": K.init_mlp(rng, [history, d_model, d_model]),
        "mete": K.init_mlp(rng, [history, d_model, d_model]),
        "fcst": K.init_mlp(rng, [horizon, d_model, d_model]),
    }


def position_codes(coords, n_pollutants, n_mete, d_model, dtype=None):
    """Additive codes ``PE + CE`` for pollutant and meteorology tokens.

    Meteorological channels are numbered after the pollutant ones so the
    two channel families never share a code.
    """
    dtype = dtype or K.default_dtype()
    pe = spatial_pe(coords.lat, coords.lon, d_model)[:, None, :]
    ce_aq = variate_pe(np.arange(n_pollutants), d_model)[None]
    ce_mete = variate_pe(n_pollutants + np.arange(n_mete), d_model)[None]
    return (pe + ce_aq).astype(dtype), (pe + ce_mete).astype(dtype)


def _embed(series, layers, code, name):
    width = layers[0][0].shape[0]
    if series.shape[-1] != width:
        raise DimensionError(
            f"{name} window length {series.shape[-1]} != MLP input width {width}"
        )
    return K.add(K.mlp_forward(series, layers), code)


def embed_all(x_hist, y_hist, y_fcst, coords, params):
    """Tokenise the three inputs; no per-instance normalisation is applied.

    Inputs are shaped ``(..., N, C, length)``; outputs ``(..., N, C, D)``.
    """
    x_hist, y_hist, y_fcst = (K.as_tensor(a) for a in (x_hist, y_hist, y_fcst))
    d_model = params["aq"][-1][0].shape[1]
    n_st = x_hist.shape[-3]
    if len(coords) != n_st:
        raise DimensionError(f"{len(coords)} coordinates for {n_st} stations")
    code_aq, code_mete = position_codes(
        coords, x_hist.shape[-2], y_hist.shape[-2], d_model, x_hist.dtype
    )
    return EmbeddedState(
        H=_embed(x_hist, params["aq"], code_aq, "pollutant"),
        E=_embed(y_hist, params["mete"], code_mete, "meteorology"),
        Z=_embed(y_fcst, params["fcst"], code_mete, "forecast"),
    )
