"""Plain-loop reference implementations used as independent test oracles."""

import math

import numpy as np


def _vecmat(x, w, b=None):
    d_out = w.shape[1]
    out = [0.0] * d_out
    for j in range(d_out):
        s = 0.0 if b is None else float(b[j])
        for i in range(len(x)):
            s += float(x[i]) * float(w[i, j])
        out[j] = s
    return out


def _layer_norm(x, gain, bias, eps=1e-5):
    n = len(x)
    mu = sum(x) / n
    var = sum((v - mu) ** 2 for v in x) / n
    r = 1.0 / math.sqrt(var + eps)
    return [(x[i] - mu) * r * float(gain[i]) + float(bias[i]) for i in range(n)]


def _attention(q, k, v, heads):
    d = len(q[0])
    dh = d // heads
    out = [[0.0] * d for _ in q]
    probs = np.zeros((heads, len(q), len(k)))
    for h in range(heads):
        lo = h * dh
        for i, qi in enumerate(q):
            scores = []
            for kj in k:
                s = 0.0
                for t in range(lo, lo + dh):
                    s += qi[t] * kj[t]
                scores.append(s / math.sqrt(dh))
            m = max(scores)
            e = [math.exp(s - m) for s in scores]
            z = sum(e)
            for j, ej in enumerate(e):
                p = ej / z
                probs[h, i, j] = p
                for t in range(lo, lo + dh):
                    out[i][t] += p * v[j][t]
    return out, probs


def compress(tokens, params):
    g, b = (t.data for t in params["norm"])
    normed = [_layer_norm(list(map(float, row)), g, b) for row in np.asarray(tokens)]
    wk = params["k"][0].data
    wv, bv = params["v"][0].data, params["v"][1].data
    keys = [_vecmat(r, wk) for r in normed]
    values = [_vecmat(r, wv, bv) for r in normed]
    q = [list(map(float, r)) for r in params["queries"].data]
    out, _ = _attention(q, keys, values, params["heads"])
    return np.array(out)


def cross_attention(queries, tokens, params, return_probs=False):
    wq, bq = params["q"][0].data, params["q"][1].data
    wk = params["k"][0].data
    wv, bv = params["v"][0].data, params["v"][1].data
    wo, bo = params["o"][0].data, params["o"][1].data
    q = [_vecmat(r, wq, bq) for r in np.asarray(queries)]
    k = [_vecmat(r, wk) for r in np.asarray(tokens)]
    v = [_vecmat(r, wv, bv) for r in np.asarray(tokens)]
    mixed, probs = _attention(q, k, v, params["heads"])
    out = np.array([_vecmat(r, wo, bo) for r in mixed])
    return (out, probs) if return_probs else out


def dam(queries, tokens, params):
    return cross_attention(queries, compress(tokens, params["compress"]), params["refine"])
