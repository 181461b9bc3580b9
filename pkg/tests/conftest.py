import numpy as np
import pytest

from mdstnet import kernel as K
from mdstnet.embedding import StationCoords
from mdstnet.model import ModelConfig, init_params

TINY = dict(n_pollutants=2, n_mete=3, history=6, horizon=4, d_model=8, depth=1,
            heads=2, spa_tokens=2, pva_tokens=2, mva_tokens=2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def f64():
    with K.precision(np.float64):
        yield


def tiny_config(**overrides):
    return ModelConfig(**{**TINY, **overrides})


def tiny_inputs(rng, n_stations=4, cfg=None, batch=()):
    cfg = cfg or tiny_config()
    shape = tuple(batch) + (n_stations,)
    x_hist = rng.normal(size=shape + (cfg.n_pollutants, cfg.history))
    y_hist = rng.normal(size=shape + (cfg.n_mete, cfg.history))
    y_fcst = rng.normal(size=shape + (cfg.n_mete, cfg.horizon))
    x_fut = rng.normal(size=shape + (cfg.n_pollutants, cfg.horizon))
    coords = StationCoords(rng.uniform(20, 45, n_stations), rng.uniform(100, 125, n_stations))
    return x_hist, y_hist, y_fcst, x_fut, coords


def randomize(params, rng, scale=0.3):
    """Give every parameter (biases, norms, queries too) generic values."""
    from mdstnet.model import parameters

    for p in parameters(params):
        p.data = p.data + rng.normal(0.0, scale, size=p.shape).astype(p.dtype)
    return params


def tiny_model(seed=0, dtype=np.float64, **overrides):
    cfg = tiny_config(**overrides)
    return cfg, init_params(cfg, seed=seed, dtype=dtype)
