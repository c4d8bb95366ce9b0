"""Loading, masking, splitting and scaling of station readings.

Signals are ``(N, F, T)`` tensors: station, feature, time.  A
:class:`MaskedDataset` tracks which entries are observed, which were hidden
on purpose (the recovery targets), and how the observed entries are split
into train/validation/test.

CSV formats
-----------
``stations.csv``
    header ``station_id,lat,lon``; decimal degrees.  Row order defines the
    node index.
``readings.csv``
    header ``t,station_id,f1,...,fF``; ``t`` is a 0-based contiguous time
    index and an empty cell is a missing value.  A (station, t) pair that
    has no row is entirely missing.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from .graph import Station, check_coordinates

FILL_POLICIES = ("interp", "mean", "zero")


class DataError(ValueError):
    """Malformed input data."""


# ---------------------------------------------------------------------------
# CSV I/O


def load_stations(path) -> list[Station]:
    stations = []
    seen = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["station_id", "lat", "lon"]:
            raise DataError(f"{path}: expected header 'station_id,lat,lon', got {header}")
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != 3:
                raise DataError(f"{path}:{line}: expected 3 fields, got {len(row)}")
            sid = row[0].strip()
            if not sid:
                raise DataError(f"{path}:{line}: empty station_id")
            if sid in seen:
                raise DataError(f"{path}:{line}: duplicate station_id {sid!r}")
            try:
                lat, lon = float(row[1]), float(row[2])
                check_coordinates(lat, lon, sid)
            except ValueError as exc:
                raise DataError(f"{path}:{line}: {exc}") from None
            seen.add(sid)
            stations.append(Station(sid, lat, lon))
    if not stations:
        raise DataError(f"{path}: no stations")
    return stations


def read_feature_names(path) -> list[str]:
    with open(path, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), None)
    if header is None or len(header) < 3 or header[0] != "t" or header[1] != "station_id":
        raise DataError(f"{path}: expected header 't,station_id,<feature...>', got {header}")
    return [h.strip() for h in header[2:]]


def load_readings(path, stations, features=None):
    """Read a readings CSV into ``(values, observed)``.

    Parameters
    ----------
    path : path-like
    stations : sequence of Station
        Defines the node order.
    features : sequence of str, optional
        Feature columns to read, in output order.  Defaults to the header.

    Returns
    -------
    values : ndarray, shape (N, F, T)
        Readings, 0.0 where missing.
    observed : ndarray of bool, shape (N, F, T)
    """
    header = read_feature_names(path)
    features = header if features is None else list(features)
    missing = [f for f in features if f not in header]
    if missing:
        raise DataError(f"{path}: feature columns {missing} not in header")
    cols = [header.index(f) + 2 for f in features]
    index = {s.id: i for i, s in enumerate(stations)}

    records = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(header) + 2:
                raise DataError(f"{path}:{line}: expected {len(header) + 2} fields, got {len(row)}")
            try:
                t = int(row[0])
            except ValueError:
                raise DataError(f"{path}:{line}: bad time index {row[0]!r}") from None
            if t < 0:
                raise DataError(f"{path}:{line}: negative time index {t}")
            sid = row[1].strip()
            if sid not in index:
                raise DataError(f"{path}:{line}: unknown station_id {sid!r}")
            key = (t, index[sid])
            if key in records:
                raise DataError(f"{path}:{line}: duplicate row for t={t}, station {sid!r}")
            vals = []
            for c in cols:
                cell = row[c].strip()
                if cell == "":
                    vals.append(None)
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}:{line}: bad value {cell!r}") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}:{line}: non-finite value {cell!r}")
                vals.append(v)
            records[key] = vals

    if not records:
        raise DataError(f"{path}: no readings")
    times = sorted({t for t, _ in records})
    if times != list(range(len(times))):
        raise DataError(f"{path}: time index must be contiguous from 0")
    T = len(times)
    values = np.zeros((len(stations), len(features), T))
    observed = np.zeros(values.shape, dtype=bool)
    for (t, i), vals in records.items():
        for j, v in enumerate(vals):
            if v is not None:
                values[i, j, t] = v
                observed[i, j, t] = True
    return values, observed


def write_stations(path, stations) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["station_id", "lat", "lon"])
        for s in stations:
            w.writerow([s.id, repr(float(s.lat)), repr(float(s.lon))])


def write_readings(path, values, stations, features, observed=None) -> None:
    """Write a readings CSV; entries where ``observed`` is False are blank."""
    values = np.asarray(values, dtype=np.float64)
    N, F, T = values.shape
    if observed is None:
        observed = np.ones(values.shape, dtype=bool)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "station_id", *features])
        for t in range(T):
            for i in range(N):
                w.writerow([t, stations[i].id,
                            *(repr(float(values[i, j, t])) if observed[i, j, t] else ""
                              for j in range(F))])


def write_mask(path, mask, stations, features) -> None:
    """Write a boolean mask in the readings layout, cells ``1``/``0``."""
    mask = np.asarray(mask, dtype=bool)
    N, F, T = mask.shape
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "station_id", *features])
        for t in range(T):
            for i in range(N):
                w.writerow([t, stations[i].id, *(int(mask[i, j, t]) for j in range(F))])


def load_mask(path, stations, features=None) -> np.ndarray:
    values, observed = load_readings(path, stations, features)
    if not observed.all():
        raise DataError(f"{path}: mask file has blank cells")
    if not np.isin(values, (0.0, 1.0)).all():
        raise DataError(f"{path}: mask cells must be 0 or 1")
    return values == 1.0


# ---------------------------------------------------------------------------
# Datasets


@dataclass(frozen=True, eq=False)
class Scaler:
    """Per-feature min-max scaling over axis 1 of an ``(N, F, T)`` tensor."""

    mins: np.ndarray
    maxs: np.ndarray

    @classmethod
    def fit(cls, values, mask) -> "Scaler":
        F = values.shape[1]
        mins, maxs = np.empty(F), np.empty(F)
        for j in range(F):
            x = values[:, j, :][mask[:, j, :]]
            if x.size == 0:
                raise DataError(f"feature {j} has no training entries")
            mins[j], maxs[j] = x.min(), x.max()
            if not maxs[j] > mins[j]:
                raise DataError(f"feature {j} is constant over the training entries "
                                f"(value {mins[j]!r}); cannot scale")
        return cls(mins, maxs)

    def normalize(self, X):
        return (X - self.mins[None, :, None]) / (self.maxs - self.mins)[None, :, None]

    def denormalize(self, X):
        return X * (self.maxs - self.mins)[None, :, None] + self.mins[None, :, None]


@dataclass(frozen=True, eq=False)
class MaskedDataset:
    """Observed signal plus the masks describing what is known.

    ``signal`` holds values at observed entries and 0.0 elsewhere.  ``hidden``
    marks entries removed on purpose; ``ground_truth`` is known only for
    synthetic or complete sources.  Once :func:`normalize` has run, ``signal``
    and ``ground_truth`` are in scaled units and ``scaler`` is set.
    """

    signal: np.ndarray
    observed: np.ndarray
    hidden: np.ndarray
    ground_truth: np.ndarray | None = None
    train: np.ndarray | None = None
    val: np.ndarray | None = None
    test: np.ndarray | None = None
    scaler: Scaler | None = None
    features: tuple = ()

    @property
    def shape(self):
        return self.signal.shape

    @property
    def is_split(self) -> bool:
        return self.train is not None


def _default_features(F):
    return tuple(f"f{j + 1}" for j in range(F))


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def from_observations(values, observed, ground_truth=None, features=None) -> MaskedDataset:
    """Dataset from readings that already contain gaps.

    With ground truth, every unobserved entry counts as hidden; without it
    the hidden set is empty and hidden-scope metrics are unavailable.
    """
    values = np.asarray(values, dtype=np.float64)
    observed = np.asarray(observed, dtype=bool)
    if values.shape != observed.shape or values.ndim != 3:
        raise DataError(f"values {values.shape} and mask {observed.shape} must match")
    if ground_truth is not None:
        ground_truth = np.asarray(ground_truth, dtype=np.float64)
        if ground_truth.shape != values.shape:
            raise DataError(f"ground truth shape {ground_truth.shape} != {values.shape}")
        hidden = ~observed
    else:
        hidden = np.zeros_like(observed)
    features = tuple(features) if features is not None else _default_features(values.shape[1])
    return MaskedDataset(np.where(observed, values, 0.0), observed, hidden, ground_truth,
                         features=features)


def apply_missing(ground_truth, ratio: float, seed, features=None) -> MaskedDataset:
    """Hide ``round(ratio * size)`` entries, sampled uniformly without replacement.

    For a fixed seed the hidden sets are nested across ratios.
    """
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"missing ratio must lie in [0, 1), got {ratio}")
    truth = np.asarray(ground_truth, dtype=np.float64)
    if truth.ndim != 3:
        raise DataError(f"ground truth must be (N, F, T), got shape {truth.shape}")
    if not np.all(np.isfinite(truth)):
        raise DataError("ground truth must be fully observed and finite")
    n_hidden = round_half_up(ratio * truth.size)
    order = np.random.default_rng(seed).permutation(truth.size)
    hidden = np.zeros(truth.size, dtype=bool)
    hidden[order[:n_hidden]] = True
    hidden = hidden.reshape(truth.shape)
    observed = ~hidden
    features = tuple(features) if features is not None else _default_features(truth.shape[1])
    return MaskedDataset(np.where(observed, truth, 0.0), observed, hidden, truth.copy(),
                         features=features)


def split_observed(ds: MaskedDataset, fractions=(0.6, 0.2, 0.2), seed=0) -> MaskedDataset:
    """Partition observed entries uniformly at random into train/val/test."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or fractions[0] <= 0:
        raise ValueError(f"fractions must be three non-negative values with train > 0, "
                         f"got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)!r}")
    idx = np.flatnonzero(ds.observed)
    n = idx.size
    n_train = round_half_up(fractions[0] * n)
    n_val = min(round_half_up(fractions[1] * n), n - n_train)
    order = np.random.default_rng(seed).permutation(n)
    masks = []
    for chunk in (order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]):
        m = np.zeros(ds.observed.size, dtype=bool)
        m[idx[chunk]] = True
        masks.append(m.reshape(ds.shape))
    return replace(ds, train=masks[0], val=masks[1], test=masks[2])


def normalize(ds: MaskedDataset) -> MaskedDataset:
    """Min-max scale each feature with statistics from train entries only."""
    if not ds.is_split:
        raise ValueError("dataset must be split before normalizing")
    if ds.scaler is not None:
        raise ValueError("dataset is already normalized")
    scaler = Scaler.fit(ds.signal, ds.train)
    signal = np.where(ds.observed, scaler.normalize(ds.signal), 0.0)
    truth = None if ds.ground_truth is None else scaler.normalize(ds.ground_truth)
    return replace(ds, signal=signal, ground_truth=truth, scaler=scaler)


def train_means(ds: MaskedDataset) -> np.ndarray:
    F = ds.shape[1]
    return np.array([ds.signal[:, j, :][ds.train[:, j, :]].mean() for j in range(F)])


def interpolate_tubes(values, known, fallback) -> np.ndarray:
    """Linear interpolation along time of each (station, feature) tube.

    Entries where ``known`` is False are interpolated from the known entries
    of the same tube, held flat before the first and after the last one.
    Tubes with no known entry take ``fallback[feature]``.
    """
    N, F, T = values.shape
    out = np.array(values, dtype=np.float64)
    t = np.arange(T, dtype=np.float64)
    for i in range(N):
        for j in range(F):
            k = known[i, j]
            if not k.any():
                out[i, j, :] = fallback[j]
            elif not k.all():
                out[i, j, ~k] = np.interp(t[~k], t[k], values[i, j, k])
    return out


def impute_initial(ds: MaskedDataset, policy: str = "interp") -> np.ndarray:
    """Complete input tensor for the model.

    Train entries keep their value.  Everything else (hidden, validation and
    test entries) is filled from train entries only: ``"interp"`` linearly
    interpolates each (station, feature) tube in time, ``"mean"`` uses the
    per-feature train mean and ``"zero"`` uses 0.0.
    """
    if not ds.is_split:
        raise ValueError("dataset must be split before imputing")
    if policy == "interp":
        return interpolate_tubes(ds.signal, ds.train, train_means(ds))
    if policy == "mean":
        fill = np.broadcast_to(train_means(ds)[None, :, None], ds.shape)
    elif policy == "zero":
        fill = np.zeros(ds.shape)
    else:
        raise ValueError(f"unknown fill policy {policy!r}; expected one of {FILL_POLICIES}")
    return np.where(ds.train, ds.signal, fill)


# ---------------------------------------------------------------------------
# Synthetic data

GREAT_LAKES_BOX = (41.0, 47.0, -92.0, -80.0)
KM_PER_DEGREE = 111.19492664455873


def generate_synthetic(N: int, F: int, T: int, stations_extent=GREAT_LAKES_BOX,
                       smoothness: float = 48.0, noise_sd: float = 0.0, seed=0,
                       bump_width_km=(400.0, 1000.0), diurnal: float = 0.5):
    """Smooth spatiotemporal field sampled at random stations.

    Each feature is an offset plus three Gaussian bumps (150-400 km wide)
    drifting across the box, with amplitudes oscillating on time scales of
    ``smoothness`` to ``3 * smoothness`` steps, plus white noise with
    standard deviation ``noise_sd``.

    Parameters
    ----------
    N, F, T : int
        Stations, features, time steps.
    stations_extent : (lat_min, lat_max, lon_min, lon_max)
    smoothness : float
        Characteristic time scale in steps; larger is smoother.
    noise_sd : float
    seed : int

    Returns
    -------
    stations : list of Station
    truth : ndarray, shape (N, F, T)
    """
    for name, v in (("N", N), ("F", F), ("T", T)):
        if int(v) != v or v < 1:
            raise ValueError(f"{name} must be a positive integer, got {v}")
    if not smoothness > 0:
        raise ValueError(f"smoothness must be positive, got {smoothness}")
    if noise_sd < 0:
        raise ValueError(f"noise_sd must be non-negative, got {noise_sd}")
    lat0, lat1, lon0, lon1 = stations_extent
    rng = np.random.default_rng(seed)

    lat = rng.uniform(lat0, lat1, N)
    lon = rng.uniform(lon0, lon1, N)
    stations = [Station(f"S{i:03d}", float(lat[i]), float(lon[i])) for i in range(N)]

    coslat = math.cos(math.radians((lat0 + lat1) / 2))
    x = (lon - lon0) * KM_PER_DEGREE * coslat
    y = (lat - lat0) * KM_PER_DEGREE
    width_km = (lon1 - lon0) * KM_PER_DEGREE * coslat
    height_km = (lat1 - lat0) * KM_PER_DEGREE
    t = np.arange(T, dtype=np.float64)

    truth = np.empty((N, F, T))
    for j in range(F):
        offset = rng.uniform(-1.0, 1.0)
        scale = rng.uniform(0.5, 2.0)
        field = np.zeros((N, T))
        for _ in range(3):
            cx = rng.uniform(0, width_km) + rng.uniform(-1, 1) * width_km / (4 * smoothness) * t
            cy = rng.uniform(0, height_km) + rng.uniform(-1, 1) * height_km / (4 * smoothness) * t
            sigma = rng.uniform(*bump_width_km)
            period = smoothness * rng.uniform(1.0, 3.0)
            amp = rng.uniform(0.5, 1.5) * (
                1.0 + 0.5 * np.sin(2 * np.pi * t / period + rng.uniform(0, 2 * np.pi)))
            d2 = (x[:, None] - cx[None, :]) ** 2 + (y[:, None] - cy[None, :]) ** 2
            field += amp[None, :] * np.exp(-d2 / (2 * sigma ** 2))
        cycle = diurnal * rng.uniform(0.5, 1.0) * np.sin(2 * np.pi * t / 24.0 + rng.uniform(0, 2 * np.pi))
        truth[:, j, :] = offset + scale * (field + cycle[None, :])
    truth += noise_sd * rng.standard_normal(truth.shape)
    return stations, truth
