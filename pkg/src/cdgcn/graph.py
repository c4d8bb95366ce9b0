"""Station graph from geographic coordinates.

Distances are great-circle (haversine) distances, turned into similarities
with a Gaussian kernel and sparsified by a threshold.  The thresholded
kernel matrix is used as the adjacency as-is; symmetric normalization is
available only as an ablation comparator.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EARTH_RADIUS_KM = 6371.0
DEFAULT_THETA = 200.0
DEFAULT_OMEGA = 0.1


@dataclass(frozen=True)
class Station:
    id: str
    lat: float
    lon: float

    def __post_init__(self):
        check_coordinates(self.lat, self.lon, self.id)


def check_coordinates(lat, lon, label="station") -> None:
    if not np.isfinite(lat) or not -90.0 <= lat <= 90.0:
        raise ValueError(f"{label}: latitude {lat} outside [-90, 90]")
    if not np.isfinite(lon) or not -180.0 <= lon <= 180.0:
        raise ValueError(f"{label}: longitude {lon} outside [-180, 180]")


def _haversine(lat1, lon1, lat2, lon2, radius):
    # inputs in degrees, broadcastable
    la1, lo1, la2, lo2 = map(np.radians, (lat1, lon1, lat2, lon2))
    h = np.sin((la2 - la1) / 2) ** 2 + np.cos(la1) * np.cos(la2) * np.sin((lo2 - lo1) / 2) ** 2
    return 2 * radius * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def haversine_distance(a: Station, b: Station, radius: float = EARTH_RADIUS_KM) -> float:
    """Great-circle distance in km between two stations."""
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    check_coordinates(a.lat, a.lon, a.id)
    check_coordinates(b.lat, b.lon, b.id)
    return float(_haversine(a.lat, a.lon, b.lat, b.lon, radius))


def distance_matrix(stations, radius: float = EARTH_RADIUS_KM) -> np.ndarray:
    """Pairwise distances (km); each unordered pair is computed once, so the
    result is exactly symmetric with a zero diagonal."""
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    lat = np.array([s.lat for s in stations], dtype=np.float64)
    lon = np.array([s.lon for s in stations], dtype=np.float64)
    n = len(stations)
    D = np.zeros((n, n))
    iu, ju = np.triu_indices(n, k=1)
    D[iu, ju] = _haversine(lat[iu], lon[iu], lat[ju], lon[ju], radius)
    D[ju, iu] = D[iu, ju]
    return D


def gaussian_similarity(D, theta: float = DEFAULT_THETA) -> np.ndarray:
    """``exp(-D**2 / (2 theta**2))`` entrywise."""
    if not theta > 0:
        raise ValueError(f"theta must be positive, got {theta}")
    D = np.asarray(D, dtype=np.float64)
    return np.exp(-(D ** 2) / (2.0 * theta ** 2))


def _check_omega(omega):
    if not 0.0 <= omega < 1.0:
        raise ValueError(f"omega must lie in [0, 1), got {omega}")


def threshold_adjacency(P, omega: float = DEFAULT_OMEGA) -> np.ndarray:
    """Keep similarities strictly above ``omega``, zero the rest.

    No renormalization is applied; the unit diagonal survives, so every node
    keeps a self-loop.
    """
    _check_omega(omega)
    P = np.asarray(P, dtype=np.float64)
    return np.where(P > omega, P, 0.0)


def symmetric_normalized_adjacency(P, omega: float = DEFAULT_OMEGA) -> np.ndarray:
    """``D^-1/2 A D^-1/2`` for the thresholded graph ``A`` (ablation only)."""
    A = threshold_adjacency(P, omega)
    deg = A.sum(axis=1)
    # self-loops keep deg >= 1 for kernel similarities; guard custom inputs anyway
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    return inv_sqrt[:, None] * A * inv_sqrt[None, :]


def adjacency_tensor(A, T: int) -> np.ndarray:
    """Stack ``T`` copies of ``A`` as frontal slices, shape ``(N, N, T)``."""
    if int(T) != T or T < 1:
        raise ValueError(f"T must be a positive integer, got {T}")
    A = np.asarray(A, dtype=np.float64)
    return np.repeat(A[:, :, None], int(T), axis=2)


ADJACENCY_KINDS = ("gaussian", "sym-norm")


@dataclass(frozen=True, eq=False)
class StationGraph:
    stations: tuple
    D: np.ndarray
    P: np.ndarray
    A: np.ndarray
    theta: float
    omega: float
    radius: float = EARTH_RADIUS_KM
    adjacency: str = "gaussian"

    @property
    def n_nodes(self) -> int:
        return len(self.stations)

    def with_adjacency(self, kind: str) -> "StationGraph":
        """Same distances and similarities, adjacency rebuilt as ``kind``."""
        A = _adjacency(self.P, self.omega, kind)
        return StationGraph(self.stations, self.D, self.P, A, self.theta, self.omega,
                            self.radius, kind)


def _adjacency(P, omega, kind):
    if kind == "gaussian":
        return threshold_adjacency(P, omega)
    if kind == "sym-norm":
        return symmetric_normalized_adjacency(P, omega)
    raise ValueError(f"unknown adjacency kind {kind!r}; expected one of {ADJACENCY_KINDS}")


def build_graph(stations, theta: float = DEFAULT_THETA, omega: float = DEFAULT_OMEGA,
                radius: float = EARTH_RADIUS_KM, adjacency: str = "gaussian") -> StationGraph:
    stations = tuple(stations)
    if not stations:
        raise ValueError("no stations")
    D = distance_matrix(stations, radius)
    P = gaussian_similarity(D, theta)
    A = _adjacency(P, omega, adjacency)
    return StationGraph(stations, D, P, A, float(theta), float(omega), float(radius), adjacency)
