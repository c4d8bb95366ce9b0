"""Recovery error metrics and trivial imputation baselines."""
from __future__ import annotations

import enum

import numpy as np

from .dataset import MaskedDataset, train_means


class MetricScope(str, enum.Enum):
    HIDDEN = "hidden"
    TEST = "test"
    WHOLE = "whole"


def _prepare(recovered, origin, mask):
    recovered = np.asarray(recovered, dtype=np.float64)
    origin = np.asarray(origin, dtype=np.float64)
    if recovered.shape != origin.shape:
        raise ValueError(f"shapes differ: {recovered.shape} vs {origin.shape}")
    if mask is None:
        mask = np.ones(origin.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != origin.shape:
        raise ValueError(f"mask shape {mask.shape} != {origin.shape}")
    if not mask.any():
        raise ValueError("metric scope mask is empty")
    return recovered[mask], origin[mask]


def rse(recovered, origin, mask=None) -> float:
    """``||recovered - origin||_F / ||origin||_F`` over the masked entries."""
    r, o = _prepare(recovered, origin, mask)
    denom = np.sqrt(np.sum(o * o))
    if denom == 0:
        raise ValueError("origin has zero norm on the scope mask")
    return float(np.sqrt(np.sum((r - o) ** 2)) / denom)


def rmse(recovered, origin, mask=None) -> float:
    """Root mean squared residual over the masked entries."""
    r, o = _prepare(recovered, origin, mask)
    return float(np.sqrt(np.mean((r - o) ** 2)))


def baseline_mean(ds: MaskedDataset) -> np.ndarray:
    """Observed entries as-is, everything else the per-feature train mean."""
    fill = np.broadcast_to(train_means(ds)[None, :, None], ds.shape)
    return np.where(ds.observed, ds.signal, fill)


def baseline_locf(ds: MaskedDataset) -> np.ndarray:
    """Last observation carried forward along time for each (station, feature).

    Leading gaps take the first observation; tubes with no observation at
    all fall back to the feature's train mean.
    """
    N, F, T = ds.shape
    means = train_means(ds)
    out = np.array(ds.signal, dtype=np.float64)
    for i in range(N):
        for j in range(F):
            obs = ds.observed[i, j]
            if not obs.any():
                out[i, j, :] = means[j]
                continue
            idx = np.where(obs, np.arange(T), -1)
            np.maximum.accumulate(idx, out=idx)
            first = int(np.argmax(obs))
            idx[idx < 0] = first
            out[i, j, :] = ds.signal[i, j, idx]
    return out
