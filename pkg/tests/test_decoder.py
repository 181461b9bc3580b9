import numpy as np
import pytest

from mdstnet import kernel as K
from mdstnet.decoder import compress_forecast, decode, decoder_layer, init_decoder
from mdstnet.exceptions import ConfigError
from mdstnet.model import named_parameters

import oracles
from conftest import randomize

D = 8


def _T(a):
    return K.Tensor(a, dtype=np.float64)


def _dec(rng, n_pollutants=3, depth=2):
    with K.precision(np.float64):
        return randomize(init_decoder(rng, D, 2, n_pollutants, depth), rng)


class TestPrompts:
    def test_56_forecast_channels_to_pollutant_count(self, rng):
        p = _dec(rng)
        assert compress_forecast(_T(rng.normal(size=(4, 56, D))), p["prompt"]).shape == (4, 3, D)

    def test_identical_forecast_tokens(self, rng):
        p = _dec(rng)
        Z = np.tile(rng.normal(size=D), (2, 6, 1))
        out = compress_forecast(_T(Z), p["prompt"]).data
        np.testing.assert_allclose(out, np.broadcast_to(out[:, :1], out.shape), atol=1e-12)

    def test_forecast_channel_permutation(self, rng):
        p = _dec(rng)
        Z = rng.normal(size=(3, 6, D))
        base = compress_forecast(_T(Z), p["prompt"]).data
        moved = compress_forecast(_T(Z[:, rng.permutation(6)]), p["prompt"]).data
        np.testing.assert_allclose(moved, base, atol=1e-6)


class TestLayer:
    def test_matches_explicit_indexing(self, rng):
        p = _dec(rng)
        Zr, H = rng.normal(size=(4, 3, D)), rng.normal(size=(4, 3, D))
        out = decoder_layer(_T(Zr), _T(H), p["layers"][0]).data
        expected = H.copy()
        for n in range(4):
            expected[n] += oracles.cross_attention(Zr[n], H[n], p["layers"][0]["dsa"])
        for c in range(3):
            expected[:, c] += oracles.cross_attention(Zr[:, c], H[:, c], p["layers"][0]["dva"])
        np.testing.assert_allclose(out, expected, atol=1e-6)

    def test_zero_output_projections_give_identity(self, rng):
        p = _dec(rng)
        for layer in p["layers"]:
            for b in ("dsa", "dva"):
                layer[b]["o"][0].data[...] = 0
                layer[b]["o"][1].data[...] = 0
        H = rng.normal(size=(4, 3, D))
        Zr = _T(rng.normal(size=(4, 3, D)))
        np.testing.assert_array_equal(decoder_layer(Zr, _T(H), p["layers"][0]).data, H)
        np.testing.assert_array_equal(decode(Zr, _T(H), p["layers"]).data, H)

    def test_single_station(self, rng):
        p = _dec(rng)
        out = decoder_layer(_T(rng.normal(size=(1, 3, D))), _T(rng.normal(size=(1, 3, D))),
                            p["layers"][0]).data
        assert np.isfinite(out).all()

    def test_prompts_are_live(self, rng):
        p = _dec(rng)
        H = _T(rng.normal(size=(4, 3, D)))
        a = decoder_layer(_T(rng.normal(size=(4, 3, D))), H, p["layers"][0]).data
        b = decoder_layer(_T(np.zeros((4, 3, D))), H, p["layers"][0]).data
        assert np.abs(a - b).max() > 1e-3


class TestDecode:
    def test_depth_one_equals_layer(self, rng):
        p = _dec(rng, depth=1)
        Zr, H = _T(rng.normal(size=(4, 3, D))), _T(rng.normal(size=(4, 3, D)))
        np.testing.assert_array_equal(decode(Zr, H, p["layers"]).data,
                                      decoder_layer(Zr, H, p["layers"][0]).data)
        with pytest.raises(ConfigError):
            decode(Zr, H, [])

    def test_shape_preserved(self, rng):
        p = _dec(rng)
        assert decode(_T(rng.normal(size=(5, 3, D))), _T(rng.normal(size=(5, 3, D))),
                      p["layers"]).shape == (5, 3, D)

    def test_gradient_reaches_forecast_tokens(self, rng):
        p = _dec(rng)
        with K.precision(np.float64):
            Z = K.parameter(rng.normal(size=(3, 5, D)))
            H = _T(rng.normal(size=(3, 3, D)))
            w = K.Tensor(rng.normal(size=(3, 3, D)))
            loss = lambda: K.sum_(K.mul(decode(compress_forecast(Z, p["prompt"]), H, p["layers"]), w))
            assert K.grad_check(loss, Z) < 1e-4
            assert np.abs(Z.grad).max() > 0

    def test_all_decoder_parameters_receive_gradient(self, rng):
        p = _dec(rng)
        with K.precision(np.float64):
            Z, H = _T(rng.normal(size=(3, 5, D))), _T(rng.normal(size=(3, 3, D)))
            out = decode(compress_forecast(Z, p["prompt"]), H, p["layers"])
            K.sum_(K.mul(out, K.Tensor(rng.normal(size=out.shape)))).backward()
        for name, t in named_parameters(p):
            assert t.grad is not None and np.abs(t.grad).max() > 0, name
