"""Dataset container, on-disk format, gap filling, CSV ingestion, windowing.

On-disk layout (one directory)::

    meta.json   manifest, see ``_manifest``
    aq.f32      pollutant block, little-endian float32, row-major (time, N, C_a)
    mete.f32    meteorology block, little-endian float32, row-major (time, N, C_m)
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embedding import StationCoords
from .exceptions import DataError, FormatError

FORMAT_VERSION = 1
HOUR = np.timedelta64(1, "h")


@dataclass
class Dataset:
    """Aligned hourly pollutant and meteorology series for N stations."""

    aq: np.ndarray  # (time, N, C_a)
    mete: np.ndarray  # (time, N, C_m)
    coords: StationCoords
    timestamps: np.ndarray  # datetime64[h], strictly increasing by one hour
    aq_names: list = field(default_factory=list)
    mete_names: list = field(default_factory=list)
    station_ids: list = field(default_factory=list)

    def __post_init__(self):
        self.aq = np.ascontiguousarray(self.aq, dtype="<f4")
        self.mete = np.ascontiguousarray(self.mete, dtype="<f4")
        self.timestamps = np.asarray(self.timestamps, dtype="datetime64[h]")
        if self.aq.ndim != 3 or self.mete.ndim != 3:
            raise DataError("aq and mete must be (time, station, channel) arrays")
        if self.aq.shape[:2] != self.mete.shape[:2]:
            raise DataError(f"aq {self.aq.shape} and mete {self.mete.shape} disagree on time/station")
        if len(self.timestamps) != self.aq.shape[0]:
            raise DataError("one timestamp per time step is required")
        if len(self.timestamps) > 1 and np.any(np.diff(self.timestamps) != HOUR):
            raise DataError("timestamps must increase strictly in one-hour steps")
        if len(self.coords) != self.aq.shape[1]:
            raise DataError(f"{len(self.coords)} coordinates for {self.aq.shape[1]} stations")
        if not (np.isfinite(self.aq).all() and np.isfinite(self.mete).all()):
            raise DataError("dataset contains missing or non-finite values; run fill_gaps first")
        self.aq_names = list(self.aq_names) or [f"aq{i}" for i in range(self.aq.shape[2])]
        self.mete_names = list(self.mete_names) or [f"mete{i}" for i in range(self.mete.shape[2])]
        self.station_ids = list(self.station_ids) or [f"S{i:03d}" for i in range(self.aq.shape[1])]
        if len(self.aq_names) != self.aq.shape[2] or len(self.mete_names) != self.mete.shape[2]:
            raise DataError("variate names do not match channel counts")
        if len(self.station_ids) != self.aq.shape[1]:
            raise DataError("station id count does not match station count")

    @property
    def n_time(self):
        return self.aq.shape[0]

    @property
    def n_stations(self):
        return self.aq.shape[1]

    def slice_time(self, start, stop):
        return Dataset(self.aq[start:stop], self.mete[start:stop], self.coords,
                       self.timestamps[start:stop], self.aq_names, self.mete_names,
                       self.station_ids)

    def take_stations(self, order):
        order = np.asarray(order)
        return Dataset(self.aq[:, order], self.mete[:, order], self.coords.take(order),
                       self.timestamps, self.aq_names, self.mete_names,
                       [self.station_ids[i] for i in order])


def split_chronological(dataset, fractions=(0.7, 0.1, 0.2)):
    """Cut the time axis into consecutive train/validation/test parts."""
    if len(fractions) != 3 or min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"split fractions must be three non-negatives summing to 1: {fractions}")
    n = dataset.n_time
    a = int(round(n * fractions[0]))
    b = int(round(n * (fractions[0] + fractions[1])))
    return dataset.slice_time(0, a), dataset.slice_time(a, b), dataset.slice_time(b, n)


# ---------------------------------------------------------------------------
# storage


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _manifest(ds, checksums):
    return {
        "format_version": FORMAT_VERSION,
        "dtype": "f32le",
        "n_time": ds.n_time,
        "n_stations": ds.n_stations,
        "aq_variates": ds.aq_names,
        "mete_variates": ds.mete_names,
        "station_ids": ds.station_ids,
        "coords": ds.coords.as_array().tolist(),
        "timestamps": [str(t) for t in ds.timestamps],
        "arrays": {
            "aq": {"file": "aq.f32", "shape": list(ds.aq.shape), "sha256": checksums["aq"]},
            "mete": {"file": "mete.f32", "shape": list(ds.mete.shape), "sha256": checksums["mete"]},
        },
    }


def save_dataset(ds, path):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    checksums = {}
    for key, arr in (("aq", ds.aq), ("mete", ds.mete)):
        target = path / f"{key}.f32"
        arr.astype("<f4").tofile(target)
        checksums[key] = _sha256(target)
    with open(path / "meta.json", "w") as f:
        json.dump(_manifest(ds, checksums), f, indent=1)
    return path


def load_dataset(path):
    """Read and validate a dataset directory written by :func:`save_dataset`."""
    path = Path(path)
    try:
        with open(path / "meta.json") as f:
            meta = json.load(f)
    except FileNotFoundError as exc:
        raise FormatError(f"{path}: no meta.json") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}/meta.json: {exc}") from exc
    if meta.get("dtype") != "f32le":
        raise FormatError(f"unsupported dtype {meta.get('dtype')!r}")
    arrays = {}
    for key in ("aq", "mete"):
        try:
            spec = meta["arrays"][key]
        except KeyError as exc:
            raise FormatError(f"manifest lacks array entry {key!r}") from exc
        shape = tuple(spec["shape"])
        if len(shape) != 3 or shape[0] != meta["n_time"] or shape[1] != meta["n_stations"]:
            raise FormatError(f"{key}: manifest shape {shape} inconsistent with n_time/n_stations")
        target = path / spec["file"]
        if not target.exists():
            raise FormatError(f"missing array file {target}")
        expected = int(np.prod(shape)) * 4
        actual = target.stat().st_size
        if actual != expected:
            raise FormatError(f"{target.name}: expected {expected} bytes, found {actual}")
        if spec.get("sha256") and _sha256(target) != spec["sha256"]:
            raise FormatError(f"{target.name}: checksum mismatch")
        arrays[key] = np.fromfile(target, dtype="<f4").reshape(shape)
    coords = np.asarray(meta["coords"], dtype=np.float64).reshape(-1, 2)
    stamps = np.array(meta["timestamps"], dtype="datetime64[h]")
    if len(stamps) > 1 and np.any(np.diff(stamps) <= np.timedelta64(0, "h")):
        raise DataError("timestamps are not strictly increasing")
    return Dataset(arrays["aq"], arrays["mete"], StationCoords(coords[:, 0], coords[:, 1]),
                   stamps, meta["aq_variates"], meta["mete_variates"], meta["station_ids"])


# ---------------------------------------------------------------------------
# gaps and ingestion


def fill_gaps(series, max_missing=0.1, reject=False):
    """Linearly interpolate NaNs along time; edges copy the nearest value.

    Raises :class:`DataError` if nothing is observed. More than
    ``max_missing`` missing warns, or raises when ``reject`` is set.
    """
    series = np.asarray(series, dtype=np.float64)
    missing = np.isnan(series)
    if missing.all():
        raise DataError("series has no observed values")
    if not missing.any():
        return series.copy()
    frac = missing.mean()
    if frac > max_missing:
        msg = f"{frac:.1%} of the series is missing (limit {max_missing:.0%})"
        if reject:
            raise DataError(msg)
        warnings.warn(msg, stacklevel=2)
    idx = np.arange(series.size)
    out = series.copy()
    out[missing] = np.interp(idx[missing], idx[~missing], series[~missing])
    return out


def fill_gaps_array(arr, max_missing=0.1, reject=False):
    """Apply :func:`fill_gaps` to every (station, channel) series of a (time, N, C) array."""
    arr = np.asarray(arr, dtype=np.float64)
    out = arr.copy()
    for n in range(arr.shape[1]):
        for c in range(arr.shape[2]):
            out[:, n, c] = fill_gaps(arr[:, n, c], max_missing, reject)
    return out


def read_csv(observations, stations, aq_names, mete_names, max_missing=0.1, reject=False):
    """Build a :class:`Dataset` from ingestion CSVs.

    ``observations`` has columns ``timestamp, station_id, <variates...>``
    (empty cells or ``NaN`` mark missing values); ``stations`` has
    ``station_id, lat, lon``. Missing hours are inserted and gap-filled.
    """
    import pandas as pd

    obs = pd.read_csv(observations, na_values=["NaN", "nan", ""], keep_default_na=True)
    st = pd.read_csv(stations, dtype={"station_id": str})
    obs["station_id"] = obs["station_id"].astype(str)
    obs["timestamp"] = pd.to_datetime(obs["timestamp"]).dt.floor("h")
    names = list(aq_names) + list(mete_names)
    absent = [c for c in ["timestamp", "station_id", *names] if c not in obs.columns]
    if absent:
        raise FormatError(f"observation CSV lacks columns {absent}")
    ids = list(st["station_id"])
    hours = pd.date_range(obs["timestamp"].min(), obs["timestamp"].max(), freq="h")
    cube = np.full((len(hours), len(ids), len(names)), np.nan)
    table = obs.set_index(["timestamp", "station_id"])[names]
    if table.index.duplicated().any():
        raise DataError("duplicate (timestamp, station_id) rows")
    for j, sid in enumerate(ids):
        try:
            block = table.xs(sid, level="station_id")
        except KeyError as exc:
            raise DataError(f"station {sid} has no observations") from exc
        cube[:, j, :] = block.reindex(hours).to_numpy(dtype=np.float64)
    cube = fill_gaps_array(cube, max_missing, reject)
    n_aq = len(aq_names)
    return Dataset(cube[..., :n_aq], cube[..., n_aq:],
                   StationCoords(st["lat"].to_numpy(), st["lon"].to_numpy()),
                   hours.to_numpy().astype("datetime64[h]"), aq_names, mete_names, ids)


# ---------------------------------------------------------------------------
# windowing


@dataclass
class Sample:
    """One forecasting window; arrays are (N, C, length)."""

    x_hist: np.ndarray
    y_hist: np.ndarray
    y_fcst: np.ndarray
    x_fut: np.ndarray
    start: np.datetime64 | None = None


class Windows:
    """All windows of a dataset as stacked zero-copy views.

    Arrays are shaped ``(S, N, C, length)``; weather forecasts are the
    realised future meteorology.
    """

    def __init__(self, dataset, history, horizon, stride=1):
        total = history + horizon
        if history < 1 or horizon < 1 or stride < 1:
            raise DataError("history, horizon and stride must be positive")
        if dataset.n_time < total:
            raise DataError(
                f"dataset has {dataset.n_time} steps, need at least history+horizon={total}"
            )
        view = np.lib.stride_tricks.sliding_window_view
        aq = view(dataset.aq, total, axis=0)[::stride]
        mete = view(dataset.mete, total, axis=0)[::stride]
        self.dataset = dataset
        self.history, self.horizon, self.stride = history, horizon, stride
        self.x_hist = aq[..., :history]
        self.x_fut = aq[..., history:]
        self.y_hist = mete[..., :history]
        self.y_fcst = mete[..., history:]
        self.starts = dataset.timestamps[: dataset.n_time - total + 1 : stride]

    def __len__(self):
        return self.x_hist.shape[0]

    def __getitem__(self, i):
        return Sample(self.x_hist[i], self.y_hist[i], self.y_fcst[i], self.x_fut[i],
                      self.starts[i])

    def batch(self, idx):
        idx = np.asarray(idx)
        return self.x_hist[idx], self.y_hist[idx], self.y_fcst[idx], self.x_fut[idx]

    @property
    def coords(self):
        return self.dataset.coords

    def forecast_times(self, i):
        """Timestamps of the ``horizon`` target steps of window ``i``."""
        return self.starts[i] + (self.history + np.arange(self.horizon)) * HOUR


def window_count(n_time, history, horizon, stride):
    return (n_time - history - horizon) // stride + 1


def window_samples(dataset, history, horizon, stride=1):
    """Ordered list of :class:`Sample` objects."""
    w = Windows(dataset, history, horizon, stride)
    return [w[i] for i in range(len(w))]
