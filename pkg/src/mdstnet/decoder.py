"""Decoder driven by compressed weather-forecast prompts."""

from __future__ import annotations

from . import kernel as K
from .dam import compress, cross_attention, init_compress, init_cross_attention
from .exceptions import ConfigError


def init_decoder(rng, d_model, heads, n_pollutants, depth):
    return {
        "prompt": init_compress(rng, d_model, heads, n_pollutants),
        "layers": [
            {
                "dsa": init_cross_attention(rng, d_model, heads),
                "dva": init_cross_attention(rng, d_model, heads),
            }
            for _ in range(depth)
        ],
    }


def compress_forecast(Z, params, tag=None):
    """Per station, squeeze C_m forecast tokens into C_a prompt tokens."""
    return compress(Z, params, tag)


def decoder_layer(prompts, H_prev, params, tag=None):
    """``H_prev + dsa + dva`` with prompts as queries.

    ``dsa`` attends within each station (over pollutant channels); ``dva``
    attends within each pollutant channel (over stations). The names
    follow the published layer, not the axis each one sweeps.
    """
    t = (lambda b: None) if tag is None else (lambda b: f"{tag}.{b}")
    dsa = cross_attention(prompts, H_prev, params["dsa"], t("dsa"))
    dva = cross_attention(
        prompts.swapaxes(-3, -2), H_prev.swapaxes(-3, -2), params["dva"], t("dva")
    ).swapaxes(-3, -2)
    return K.add(K.add(dsa, dva), H_prev)


def decode(prompts, H_enc, layers, tag="dec"):
    if not layers:
        raise ConfigError("decoder needs at least one layer")
    H = H_enc
    for i, params in enumerate(layers):
        H = decoder_layer(prompts, H, params, tag=None if tag is None else f"{tag}{i}")
    return H
