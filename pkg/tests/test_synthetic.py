import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdstnet.exceptions import ConfigError
from mdstnet.synthetic import METE_NAMES, SynthConfig, gen_synthetic, transport_step

QUIET = dict(emission=0.0, area_emission=0.0, dust_emission=0.0, decay=0.0, formation_rate=0.0,
             scavenging=0.0, rain_rate=0.0, noise=0.0, mixing_dilution=False)


def test_default_shape_and_names():
    ds = gen_synthetic(SynthConfig(n_steps=50, spinup=5))
    assert ds.aq.shape == (50, 16, 3) and ds.mete.shape == (50, 16, 6)
    assert ds.mete_names == METE_NAMES
    assert (ds.aq >= 0).all()


def test_seed_determinism():
    cfg = SynthConfig(n_steps=60, spinup=10)
    a, b = gen_synthetic(cfg, seed=5), gen_synthetic(cfg, seed=5)
    assert a.aq.tobytes() == b.aq.tobytes() and a.mete.tobytes() == b.mete.tobytes()
    assert gen_synthetic(cfg, seed=6).aq.tobytes() != a.aq.tobytes()


def test_constant_field_without_forcing():
    cfg = SynthConfig(n_steps=40, spinup=0, constant_wind=(0.0, 0.0), diffusion=0.0, **QUIET)
    ds = gen_synthetic(cfg)
    assert np.all(ds.aq == ds.aq[0])


def test_latent_mass_conserved():
    cfg = SynthConfig(n_steps=80, spinup=0, **{**QUIET, "formation_rate": 0.08})
    _, totals = gen_synthetic(cfg, return_latent=True)
    mass = totals.sum(axis=1)
    assert np.abs(np.diff(mass)).max() / mass[0] < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.floats(-1.0, 1.0), st.floats(-1.0, 1.0), st.floats(0.0, 0.25), st.integers(0, 2**31))
def test_transport_conserves_mass(u, v, k, seed):
    field = np.random.default_rng(seed).random((2, 9, 7))
    out = transport_step(field, u, v, k, 1)
    assert abs(out.sum() - field.sum()) <= 1e-6 * field.sum()
    assert (out >= -1e-12).all()


def test_unit_courant_is_exact_shift(rng):
    field = rng.random((5, 6))
    np.testing.assert_allclose(transport_step(field, 1.0, 0.0, 0.0, 1), np.roll(field, 1, -1))
    np.testing.assert_allclose(transport_step(field, 0.0, -1.0, 0.0, 1), np.roll(field, -1, -2))


def _plume(diffusion):
    # source in column 0; stations 5 and 8 cells downwind on the same row
    cfg = SynthConfig(n_stations=2, n_steps=300, spinup=40, constant_wind=(1.0, 0.0),
                      substeps=1, station_cells=[(10, 5), (10, 8)], source_cells=[(10, 0)],
                      diffusion=diffusion, **{**QUIET, "emission": 50.0})
    ds = gen_synthetic(cfg)
    return ds.aq[:, 0, 0].astype(np.float64), ds.aq[:, 1, 0].astype(np.float64)


def test_downwind_station_sees_delayed_signal():
    up, down = _plume(0.0)
    assert up.std() > 1.0
    np.testing.assert_allclose(down[3:], up[:-3], rtol=1e-6)


def test_delay_survives_diffusion():
    up, down = _plume(0.08)
    up, down = up - up.mean(), down - down.mean()
    lags = range(8)
    corr = [np.corrcoef(down[k:], up[:len(up) - k])[0, 1] for k in lags]
    assert int(np.argmax(corr)) == 3


def test_cfl_violation():
    with pytest.raises(ConfigError, match="CFL"):
        gen_synthetic(SynthConfig(constant_wind=(1.5, 0.0), substeps=1, n_steps=5))
    with pytest.raises(ConfigError):
        gen_synthetic(SynthConfig(diffusion=0.3, substeps=1, n_steps=5))
