import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from mdstnet import kernel as K
from mdstnet.data import Windows
from mdstnet.estimator import (HistoricalAverage, MDSTNetForecaster, Persistence, Standardizer,
                               fit_predict_split)
from mdstnet.exceptions import DimensionError
from mdstnet.model import forward
from mdstnet.synthetic import SynthConfig, gen_synthetic

from conftest import randomize, tiny_inputs, tiny_model

SMALL = dict(history=6, horizon=4, d_model=8, depth=1, heads=2, spa_tokens=2, pva_tokens=2,
             mva_tokens=1, epochs=1, batch_size=16)


@pytest.fixture(scope="module")
def dataset():
    return gen_synthetic(SynthConfig(n_stations=5, n_steps=150, spinup=10), seed=2)


def test_get_params_and_clone():
    est = MDSTNetForecaster(d_model=16, disable_mva=True)
    params = est.get_params()
    assert params["d_model"] == 16 and params["disable_mva"] and params["lr"] == 5e-4
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(depth=1)
    assert est.depth == 1


def test_not_fitted(dataset):
    with pytest.raises(NotFittedError):
        MDSTNetForecaster(**SMALL).predict(dataset)
    with pytest.raises(NotFittedError):
        Persistence(6, 4).predict(dataset)


def test_rejects_non_dataset():
    with pytest.raises(TypeError):
        MDSTNetForecaster(**SMALL).fit(np.zeros((10, 2, 3)))


def test_fit_predict_shapes_and_units(dataset):
    est = MDSTNetForecaster(**SMALL).fit(dataset)
    preds = est.predict(dataset)
    assert preds.shape == (150 - 10 + 1, 5, 3, 4)
    assert np.isfinite(preds).all()
    assert len(est.loss_trace_) == 1
    assert est.score(dataset) < 0


def test_state_round_trip(dataset):
    est = MDSTNetForecaster(**SMALL).fit(dataset)
    twin = MDSTNetForecaster(**SMALL).set_state(est.get_state())
    np.testing.assert_array_equal(twin.predict(dataset), est.predict(dataset))


def test_fit_is_deterministic(dataset):
    a = MDSTNetForecaster(**SMALL, seed=4).fit(dataset)
    b = MDSTNetForecaster(**SMALL, seed=4).fit(dataset)
    assert a.step_losses_ == b.step_losses_
    assert a.predict(dataset).tobytes() == b.predict(dataset).tobytes()


def test_channel_mismatch(dataset):
    est = MDSTNetForecaster(**SMALL).fit(dataset)
    other = gen_synthetic(SynthConfig(n_stations=5, n_pollutants=2, n_steps=30, spinup=2))
    with pytest.raises(DimensionError):
        est.predict(other)


def test_split_helper(dataset):
    est, test = fit_predict_split(MDSTNetForecaster(**SMALL), dataset)
    assert test.n_time == 30
    assert "val_loss" in est.loss_trace_[0]


def test_standardizer_inverse(dataset):
    s = Standardizer().fit(dataset)
    scaled = s.transform(dataset)
    np.testing.assert_allclose(scaled.aq.mean(axis=(0, 1)), 0, atol=1e-4)
    back = s.inverse_aq(scaled.aq.transpose(1, 2, 0))
    np.testing.assert_allclose(back, dataset.aq.transpose(1, 2, 0), rtol=1e-4, atol=1e-3)


def test_baselines(dataset):
    w = Windows(dataset, 6, 4)
    ha = HistoricalAverage(6, 4).fit(dataset)
    np.testing.assert_allclose(ha.predict(dataset), np.repeat(w.x_hist.mean(-1, keepdims=True), 4, -1))
    pe = Persistence(6, 4).fit()
    np.testing.assert_array_equal(pe.predict(w)[..., 0], w.x_hist[..., -1])
    assert pe.evaluate(dataset).get("1-4h") > 0


def test_full_model_station_permutation_equivariance(rng):
    cfg, p = tiny_model(seed=1)
    randomize(p, rng)
    xh, yh, yf, _, coords = tiny_inputs(rng, n_stations=5)
    perm = rng.permutation(5)
    with K.precision(np.float64):
        pred, rec = forward(p, cfg, xh, yh, yf, coords)
        pred_p, rec_p = forward(p, cfg, xh[perm], yh[perm], yf[perm], coords.take(perm))
    np.testing.assert_allclose(pred_p.data, pred.data[perm], atol=1e-6)
    np.testing.assert_allclose(rec_p.data, rec.data[perm], atol=1e-6)


def test_historical_meteorology_changes_forecast(rng):
    cfg, p = tiny_model(seed=2)
    randomize(p, rng)
    xh, yh, yf, _, coords = tiny_inputs(rng)
    with K.precision(np.float64):
        a = forward(p, cfg, xh, yh, yf, coords)[0].data
        b = forward(p, cfg, xh, yh + 1.0, yf, coords)[0].data
        cfg.disable_mva = True
        c = forward(p, cfg, xh, yh, yf, coords)[0].data
        d = forward(p, cfg, xh, yh + 1.0, yf, coords)[0].data
    assert np.abs(a - b).max() > 1e-3
    np.testing.assert_array_equal(c, d)
