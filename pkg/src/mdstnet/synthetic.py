"""Synthetic advection-diffusion-reaction benchmark.

A latent pollutant field on a periodic grid is pushed around by a
spatially uniform wind, smoothed by diffusion, fed by point and area
sources, and removed by decay and rain scavenging. A precursor species
turns into an unobserved intermediate when humid, which later converts
into a secondary species; this makes past humidity matter for future
concentrations. Stations read the field bilinearly and see it diluted by
the local mixing height.

All randomness comes from ``numpy.random.Generator(PCG64(seed))`` and is
drawn in a fixed order, so a seed reproduces the dataset bit for bit on
any platform numpy supports.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .embedding import StationCoords
from .exceptions import ConfigError

METE_NAMES = ["wind_u", "wind_v", "mixing_height", "humidity", "temperature", "rain"]
AQ_NAMES = ["NO2", "PM10", "PM2.5"]
KMH_PER_CELL = 27.8  # 0.25 degree cell


@dataclass
class SynthConfig:
    n_stations: int = 16
    n_pollutants: int = 3
    n_steps: int = 4000
    grid: int = 32
    lat0: float = 30.0
    lon0: float = 110.0
    cell_deg: float = 0.25
    jitter: float = 0.4
    station_cells: list | None = None  # explicit (row, col) positions, fractional allowed
    start: str = "2022-01-01T00"
    spinup: int = 96
    # transport
    wind_speed: float = 0.5  # mean, cells per hour
    wind_max: float = 1.5
    constant_wind: tuple | None = None  # (u, v) in cells per hour
    diffusion: float = 0.08  # cells^2 per hour
    substeps: int = 2
    # sources and chemistry
    n_sources: int = 6
    source_cells: list | None = None
    emission: float = 60.0
    area_emission: float = 0.4
    dust_emission: float = 0.3
    decay: float = 0.03
    formation_rate: float = 0.08
    conversion_rate: float = 0.1
    scavenging: float = 0.6
    rain_rate: float = 0.03  # storm onsets per hour
    mixing_dilution: bool = True
    diurnal_amplitude: float = 0.5
    synoptic_amplitude: float = 0.35
    background: float = 20.0
    noise: float = 0.02

    def validate(self):
        if self.n_stations < 1 or self.n_pollutants < 1 or self.n_steps < 1:
            raise ConfigError("n_stations, n_pollutants and n_steps must be positive")
        if self.grid < 3 or self.substeps < 1:
            raise ConfigError("grid must be >= 3 and substeps >= 1")
        dt = 1.0 / self.substeps
        speed = max(abs(c) for c in self.constant_wind) if self.constant_wind else self.wind_max
        if speed * dt > 1.0 + 1e-12:
            raise ConfigError(
                f"CFL violated: wind {speed} cells/h with {self.substeps} substeps "
                f"gives Courant number {speed * dt:.3f} > 1"
            )
        if 4.0 * self.diffusion * dt > 1.0 + 1e-12:
            raise ConfigError(
                f"diffusion stability violated: 4*K*dt = {4 * self.diffusion * dt:.3f} > 1"
            )
        if min(self.decay, self.diffusion, self.noise, self.scavenging) < 0:
            raise ConfigError("rates and noise levels must be non-negative")


def transport_step(conc, u, v, diffusion, substeps):
    """Advance ``(..., ny, nx)`` fields by one hour on a periodic grid.

    First-order upwind advection (flux form) followed by explicit
    five-point diffusion, each split into ``substeps``. Both conserve the
    field total; with Courant number 1 advection is an exact shift.
    """
    dt = 1.0 / substeps
    cx, cy, k = u * dt, v * dt, diffusion * dt
    for _ in range(substeps):
        if cx > 0:
            conc = (1.0 - cx) * conc + cx * np.roll(conc, 1, axis=-1)
        elif cx < 0:
            conc = (1.0 + cx) * conc - cx * np.roll(conc, -1, axis=-1)
        if cy > 0:
            conc = (1.0 - cy) * conc + cy * np.roll(conc, 1, axis=-2)
        elif cy < 0:
            conc = (1.0 + cy) * conc - cy * np.roll(conc, -1, axis=-2)
        if k:
            lap = (np.roll(conc, 1, -1) + np.roll(conc, -1, -1)
                   + np.roll(conc, 1, -2) + np.roll(conc, -1, -2) - 4.0 * conc)
            conc = conc + k * lap
    return conc


def _ou(rng, n, timescale):
    """Unit-variance Ornstein-Uhlenbeck path sampled hourly."""
    a = math.exp(-1.0 / timescale)
    shocks = rng.standard_normal(n) * math.sqrt(1.0 - a * a)
    out = np.empty(n)
    x = rng.standard_normal()
    for i in range(n):
        x = a * x + shocks[i]
        out[i] = x
    return out


def _bilinear(field, rows, cols):
    """Sample ``(..., ny, nx)`` at fractional cell indices, periodic."""
    ny, nx = field.shape[-2:]
    r0 = np.floor(rows).astype(int)
    c0 = np.floor(cols).astype(int)
    fr, fc = rows - r0, cols - c0
    r1, c1 = (r0 + 1) % ny, (c0 + 1) % nx
    r0, c0 = r0 % ny, c0 % nx
    return ((1 - fr) * (1 - fc) * field[..., r0, c0] + (1 - fr) * fc * field[..., r0, c1]
            + fr * (1 - fc) * field[..., r1, c0] + fr * fc * field[..., r1, c1])


def station_layout(cfg, rng):
    """Fractional (row, col) grid indices: a lattice with uniform jitter."""
    if cfg.station_cells is not None:
        cells = np.asarray(cfg.station_cells, dtype=np.float64).reshape(-1, 2)
        if len(cells) != cfg.n_stations:
            raise ConfigError("station_cells length must equal n_stations")
        return cells[:, 0], cells[:, 1]
    k = math.ceil(math.sqrt(cfg.n_stations))
    spacing = cfg.grid / k
    jit = rng.uniform(-0.5, 0.5, size=(k * k, 2)) * cfg.jitter * spacing
    idx = np.arange(k * k)
    rows = (idx // k + 0.5) * spacing - 0.5 + jit[:, 0]
    cols = (idx % k + 0.5) * spacing - 0.5 + jit[:, 1]
    return rows[: cfg.n_stations], cols[: cfg.n_stations]


def emission_profile(hours):
    """Diurnal/weekly activity multiplier for point sources (hours since start)."""
    hours = np.asarray(hours, dtype=np.float64)
    hod = hours % 24
    dow = (hours // 24) % 7
    return (1.0 + 0.35 * np.sin(2 * np.pi * (hod - 6) / 24)) * np.where(dow >= 5, 0.8, 1.0)


class _Storms:
    def __init__(self, rng, n_hours, rate, grid):
        self.grid = grid
        self.onset = rng.random(n_hours) < rate
        self.params = rng.random((n_hours, 5))
        self.active = []
        yy, xx = np.mgrid[0:grid, 0:grid]
        self.yy, self.xx = yy.astype(np.float64), xx.astype(np.float64)

    def field(self, i, u, v):
        if self.onset[i]:
            p = self.params[i]
            self.active.append([p[0] * self.grid, p[1] * self.grid, 2.0 + 5.0 * p[2],
                                0.3 + 1.5 * p[3], int(3 + 12 * p[4])])
        rain = np.zeros((self.grid, self.grid))
        keep = []
        for s in self.active:
            dy = (self.yy - s[0] + self.grid / 2) % self.grid - self.grid / 2
            dx = (self.xx - s[1] + self.grid / 2) % self.grid - self.grid / 2
            rain += s[3] * np.exp(-(dx * dx + dy * dy) / (2 * s[2] ** 2))
            s[0] += v
            s[1] += u
            s[4] -= 1
            if s[4] > 0:
                keep.append(s)
        self.active = keep
        return rain


def gen_synthetic(cfg=None, seed=0, return_latent=False):
    """Simulate ``cfg.n_steps`` hours and return a :class:`Dataset`.

    With ``return_latent`` also returns the latent field totals per hour,
    shaped (n_steps, n_species + 1).
    """
    cfg = cfg or SynthConfig()
    cfg.validate()
    rng = np.random.Generator(np.random.PCG64(seed))
    G, S = cfg.grid, cfg.n_pollutants
    total = cfg.spinup + cfg.n_steps

    rows, cols = station_layout(cfg, rng)
    lat = cfg.lat0 + (rows + 0.5) * cfg.cell_deg
    lon = cfg.lon0 + (cols + 0.5) * cfg.cell_deg

    # weather drivers, drawn in a fixed order
    theta = np.cumsum(rng.normal(0.0, 0.08, total) + np.where(
        rng.random(total) < 1.0 / 60.0, rng.uniform(-np.pi, np.pi, total), 0.0))
    theta += rng.uniform(0, 2 * np.pi)
    syn_speed = _ou(rng, total, 36.0)
    syn_mix = _ou(rng, total, 48.0)
    syn_temp = _ou(rng, total, 72.0)
    syn_hum = _ou(rng, total, 12.0)
    pattern = rng.standard_normal((3, cfg.n_stations))
    if cfg.constant_wind is not None:
        u_t = np.full(total, float(cfg.constant_wind[0]))
        v_t = np.full(total, float(cfg.constant_wind[1]))
    else:
        speed = np.clip(cfg.wind_speed * np.exp(0.4 * syn_speed), 0.02, cfg.wind_max)
        u_t = np.clip(speed * np.cos(theta), -cfg.wind_max, cfg.wind_max)
        v_t = np.clip(speed * np.sin(theta), -cfg.wind_max, cfg.wind_max)
    storms = _Storms(rng, total, cfg.rain_rate, G)

    # sources
    if cfg.source_cells is not None:
        src = np.asarray(cfg.source_cells, dtype=int).reshape(-1, 2)
    else:
        src = rng.integers(0, G, size=(cfg.n_sources, 2))
    strength = rng.uniform(0.5, 1.5, len(src)) * cfg.emission
    ratios = rng.uniform(0.5, 1.5, (len(src), S))
    if S >= 3:
        ratios[:, 1] *= 0.5
    if S >= 2:
        ratios[:, -1] *= 0.1  # secondary species is mostly chemically formed
    point = np.zeros((S, G, G))
    for (r, c), w, ratio in zip(src, strength, ratios):
        point[:, r % G, c % G] += w * ratio
    area = np.zeros((S, G, G))
    if cfg.area_emission:
        area += cfg.area_emission * rng.uniform(0.5, 1.5, (1, G, G))
    noise = rng.standard_normal((cfg.n_steps, cfg.n_stations, S))

    # state: S observed species + 1 unobserved intermediate
    conc = np.full((S + 1, G, G), cfg.background, dtype=np.float64)
    conc[S] = 0.0
    soil = 0.0
    aq = np.empty((cfg.n_steps, cfg.n_stations, S))
    mete = np.empty((cfg.n_steps, cfg.n_stations, len(METE_NAMES)))
    totals = np.empty((cfg.n_steps, S + 1))
    two_pi = 2 * np.pi

    for i in range(total):
        hour = i - cfg.spinup
        hod = hour % 24
        u, v = u_t[i], v_t[i]
        rain = storms.field(i, u, v) if cfg.rain_rate > 0 else np.zeros((G, G))
        diurnal = math.sin(two_pi * (hod - 9) / 24)
        temp_anom = 0.6 * diurnal + 0.5 * syn_temp[i]
        humidity = np.clip(0.55 + 0.18 * syn_hum[i] - 0.1 * diurnal + 0.3 * np.minimum(rain, 1.0),
                           0.05, 1.0)

        conc = transport_step(conc, u, v, cfg.diffusion, cfg.substeps)

        if S >= 2 and cfg.formation_rate:
            formed = conc[0] * (1.0 - np.exp(-cfg.formation_rate * np.maximum(humidity - 0.5, 0) * 2))
            conc[0] -= formed
            conc[S] += formed
            converted = conc[S] * (1.0 - math.exp(-cfg.conversion_rate))
            conc[S] -= converted
            conc[S - 1] += converted
        if cfg.decay:
            rates = np.full(S + 1, cfg.decay)
            rates[0] *= max(0.2, 1.0 + 0.5 * temp_anom)
            rates[S] *= 0.2
            conc *= np.exp(-rates)[:, None, None]
        if cfg.scavenging:
            conc[1:] *= np.exp(-cfg.scavenging * rain)[None]
            conc[0] *= np.exp(-0.3 * cfg.scavenging * rain)
        soil = 0.97 * soil + rain.mean()
        conc[:S] += point * emission_profile(hour) + area
        if S >= 2 and cfg.dust_emission:
            conc[1] += cfg.dust_emission * (u * u + v * v) * math.exp(-soil)

        if hour < 0:
            continue
        mix = (1.0 + cfg.diurnal_amplitude * diurnal) * np.exp(
            cfg.synoptic_amplitude * syn_mix[i]) * (1.0 + 0.1 * np.tanh(pattern[0]))
        mix = np.maximum(mix, 0.1)
        obs = _bilinear(conc[:S], rows, cols).T  # (N, S)
        if cfg.mixing_dilution:
            obs = obs / mix[:, None]
        obs = obs * (1.0 + cfg.noise * noise[hour])
        aq[hour] = np.maximum(obs, 0.0)
        hum_st = _bilinear(humidity[None] if np.ndim(humidity) == 2 else
                           np.full((1, G, G), humidity), rows, cols)[0]
        mete[hour, :, 0] = u * KMH_PER_CELL / 3.6
        mete[hour, :, 1] = v * KMH_PER_CELL / 3.6
        mete[hour, :, 2] = 800.0 * mix
        mete[hour, :, 3] = 100.0 * hum_st
        mete[hour, :, 4] = 15.0 + 8.0 * temp_anom + 2.0 * pattern[1]
        mete[hour, :, 5] = 2.0 * _bilinear(rain[None], rows, cols)[0]
        totals[hour] = conc.reshape(S + 1, -1).sum(axis=1)

    names = AQ_NAMES[:S] if S <= len(AQ_NAMES) else [f"aq{i}" for i in range(S)]
    stamps = np.datetime64(cfg.start, "h") + np.arange(cfg.n_steps) * np.timedelta64(1, "h")
    ds = Dataset(aq, mete, StationCoords(lat, lon), stamps, names, METE_NAMES,
                 [f"S{i:03d}" for i in range(cfg.n_stations)])
    if return_latent:
        return ds, totals
    return ds
