"""Distillation attention: squeeze N key/value tokens through N_r learned
queries, then let M query tokens attend to the distilled set.

Cost is ``(N*N_r + M*N_r) * D`` score multiply-accumulates instead of
``N*M*D`` for plain cross attention; :func:`count_score_macs` measures it.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np

from . import kernel as K
from .exceptions import ConfigError, DimensionError

MAX_DISTILLED_TOKENS = 4096

_counters = []
_recorders = []


class _MacCounter:
    def __init__(self):
        self.total = 0
        self.calls = []


@contextlib.contextmanager
def count_score_macs():
    """Count query-key multiply-accumulates done inside the block."""
    counter = _MacCounter()
    _counters.append(counter)
    try:
        yield counter
    finally:
        _counters.remove(counter)


@contextlib.contextmanager
def record_attention():
    """Collect ``{tag: probabilities}`` for every attention map computed.

    Probabilities are shaped ``(..., heads, queries, keys)``.
    """
    store = {}
    _recorders.append(store)
    try:
        yield store
    finally:
        _recorders.remove(store)


def score_mult_count(n_keys, n_queries, n_distilled, d_model):
    """Score MACs of one distillation-attention call."""
    return (n_keys * n_distilled + n_queries * n_distilled) * d_model


def full_mult_count(n_keys, n_queries, d_model):
    return n_keys * n_queries * d_model


def _split_heads(x, heads):
    *lead, n, d = x.shape
    return x.reshape(tuple(lead) + (n, heads, d // heads)).swapaxes(-2, -3)


def _merge_heads(x):
    *lead, h, n, dh = x.shape
    return x.swapaxes(-2, -3).reshape(tuple(lead) + (n, h * dh))


def multihead(q, k, v, heads, tag=None):
    """Scaled dot-product attention on already-projected (..., n, D) tokens."""
    d_model = q.shape[-1]
    if k.shape[-1] != d_model or v.shape[-1] != d_model:
        raise DimensionError(f"attention widths differ: q {q.shape}, k {k.shape}, v {v.shape}")
    if d_model % heads:
        raise ConfigError(f"d_model {d_model} not divisible by {heads} heads")
    dh = d_model // heads
    qh, kh, vh = _split_heads(q, heads), _split_heads(k, heads), _split_heads(v, heads)
    scores = K.mul(K.matmul(qh, kh.swapaxes(-1, -2)), 1.0 / math.sqrt(dh))
    if _counters:
        macs = int(np.prod(scores.shape)) * dh
        for c in _counters:
            c.total += macs
            c.calls.append((tag, macs))
    probs = K.softmax(scores, axis=-1)
    if _recorders and tag is not None:
        for store in _recorders:
            store[tag] = probs.data.copy()
    return _merge_heads(K.matmul(probs, vh))


# ---------------------------------------------------------------------------
# parameters


def init_cross_attention(rng, d_model, heads):
    """Projections for standard multi-head cross attention.

    The key projection carries no bias: a shared offset on every key only
    shifts each score row by a constant, which softmax ignores.
    """
    if d_model % heads:
        raise ConfigError(f"d_model {d_model} not divisible by {heads} heads")
    return {
        "heads": heads,
        "q": K.init_linear(rng, d_model, d_model),
        "k": K.init_linear(rng, d_model, d_model, bias=False),
        "v": K.init_linear(rng, d_model, d_model),
        "o": K.init_linear(rng, d_model, d_model),
    }


def init_compress(rng, d_model, heads, n_distilled, query_std=None):
    """Compression parameters; queries ~ N(0, query_std**2), default std 1/sqrt(D)."""
    if not 1 <= n_distilled <= MAX_DISTILLED_TOKENS:
        raise ConfigError(
            f"distilled token count must be in [1, {MAX_DISTILLED_TOKENS}], got {n_distilled}"
        )
    if d_model % heads:
        raise ConfigError(f"d_model {d_model} not divisible by {heads} heads")
    if query_std is None:
        query_std = d_model ** -0.5
    return {
        "heads": heads,
        "queries": K.parameter(rng.normal(0.0, query_std, size=(n_distilled, d_model))),
        "norm": (K.parameter(np.ones(d_model)), K.parameter(np.zeros(d_model))),
        "k": K.init_linear(rng, d_model, d_model, bias=False),
        "v": K.init_linear(rng, d_model, d_model),
    }


def init_dam(rng, d_model, heads, n_distilled):
    return {
        "compress": init_compress(rng, d_model, heads, n_distilled),
        "refine": init_cross_attention(rng, d_model, heads),
    }


# ---------------------------------------------------------------------------
# forward


def compress(tokens, params, tag=None):
    """Distil ``(..., N, D)`` tokens into ``(..., N_r, D)``."""
    gain, bias = params["norm"]
    b = K.layer_norm(tokens, gain, bias)
    keys = K.linear(b, *params["k"])
    values = K.linear(b, *params["v"])
    return multihead(params["queries"], keys, values, params["heads"], tag)


def cross_attention(queries, tokens, params, tag=None):
    """Standard multi-head attention: ``queries`` attend over ``tokens``."""
    queries, tokens = K.as_tensor(queries), K.as_tensor(tokens)
    if queries.shape[-1] != tokens.shape[-1]:
        raise DimensionError(
            f"query width {queries.shape[-1]} != key/value width {tokens.shape[-1]}"
        )
    q = K.linear(queries, *params["q"])
    k = K.linear(tokens, *params["k"])
    v = K.linear(tokens, *params["v"])
    return K.linear(multihead(q, k, v, params["heads"], tag), *params["o"])


def refine(queries, distilled, params, tag=None):
    """Queries ``(..., M, D)`` attend to distilled ``(..., N_r, D)`` tokens."""
    return cross_attention(queries, distilled, params, tag)


def dam(queries, tokens, params, tag=None):
    """``refine(queries, compress(tokens))``."""
    ctag = rtag = None
    if tag is not None:
        ctag, rtag = f"{tag}.compress", f"{tag}.refine"
    return refine(queries, compress(tokens, params["compress"], ctag), params["refine"], rtag)
