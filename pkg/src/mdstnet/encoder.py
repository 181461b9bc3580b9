"""Encoder: stacked layers of three decoupled attention branches.

Tokens are shaped ``(..., N, C_a, D)``. Each branch owns one parameter set
that is shared over its slice loop (all channels for the spatial branch,
all stations for the two variate branches).
"""

from __future__ import annotations

from . import kernel as K
from .dam import cross_attention, dam, init_cross_attention, init_dam
from .exceptions import ConfigError

BRANCHES = ("spa", "pva", "mva")


def init_encoder_layer(rng, d_model, heads, spa_tokens, pva_tokens, mva_tokens,
                       full_attention=False):
    if full_attention:
        return {b: init_cross_attention(rng, d_model, heads) for b in BRANCHES}
    return {
        "spa": init_dam(rng, d_model, heads, spa_tokens),
        "pva": init_dam(rng, d_model, heads, pva_tokens),
        "mva": init_dam(rng, d_model, heads, mva_tokens),
    }


def _attend(queries, tokens, params, tag):
    if "compress" in params:
        return dam(queries, tokens, params, tag)
    return cross_attention(queries, tokens, params, tag)


def spa_branch(H, params, tag=None):
    """Per pollutant channel, stations attend to stations."""
    Hc = H.swapaxes(-3, -2)  # (..., C_a, N, D)
    return _attend(Hc, Hc, params, tag).swapaxes(-3, -2)


def pva_branch(H, params, tag=None):
    """Per station, pollutant channels attend to each other."""
    return _attend(H, H, params, tag)


def mva_branch(H, E, params, tag=None):
    """Per station, pollutant channels query the meteorological channels."""
    return _attend(H, E, params, tag)


def encoder_layer(H, E, params, disabled=(), post_norm=None, tag=None):
    """``H + Spa(H) + Pva(H) + Mva(H, E)``, summed in that order.

    Branches named in ``disabled`` contribute nothing.
    """
    t = (lambda b: None) if tag is None else (lambda b: f"{tag}.{b}")
    out = None
    if "spa" not in disabled:
        out = spa_branch(H, params["spa"], t("spa"))
    if "pva" not in disabled:
        h = pva_branch(H, params["pva"], t("pva"))
        out = h if out is None else K.add(out, h)
    if "mva" not in disabled:
        h = mva_branch(H, E, params["mva"], t("mva"))
        out = h if out is None else K.add(out, h)
    out = H if out is None else K.add(out, H)
    if post_norm is not None:
        out = K.layer_norm(out, *post_norm)
    return out


def encode(H, E, layers, disabled=(), post_norms=None, tag="enc"):
    """Apply every encoder layer in turn; ``E`` is fed unchanged to each."""
    if not layers:
        raise ConfigError("encoder needs at least one layer")
    for i, params in enumerate(layers):
        norm = post_norms[i] if post_norms else None
        H = encoder_layer(H, E, params, disabled, norm, tag=None if tag is None else f"{tag}{i}")
    return H
