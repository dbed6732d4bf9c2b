"""Pairwise dissimilarity between ZIP records.

The combined distance mixes great-circle proximity with feature similarity;
each term is rescaled to [0, 1] before mixing so the weights are meaningful.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ingest import EARTH_RADIUS_KM, Dataset, DataError, haversine_matrix


@dataclass(frozen=True)
class DistanceMatrix:
    d: np.ndarray
    geo_weight: float = 0.5
    feat_weight: float = 0.5

    def __post_init__(self):
        d = np.array(self.d, dtype=float)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise ValueError(f"distance matrix must be square, got shape {d.shape}")
        if not np.all(np.isfinite(d)) or (d < 0).any():
            raise ValueError("distances must be finite and non-negative")
        if not np.allclose(d, d.T, rtol=0, atol=1e-12):
            raise ValueError("distance matrix must be symmetric")
        if np.any(np.diag(d) != 0):
            raise ValueError("distance matrix must have a zero diagonal")
        d.setflags(write=False)
        object.__setattr__(self, "d", d)

    @property
    def n(self) -> int:
        return self.d.shape[0]

    def __getitem__(self, idx):
        return self.d[idx]

    def to_csv(self) -> str:
        return "\n".join(",".join(repr(float(v)) for v in row) for row in self.d) + "\n"


def haversine_km(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance on a sphere of radius 6371 km."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dphi = p2 - p1
    dlmb = math.radians(lon2 - lon1)
    a = math.sin(dphi / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(math.sqrt(min(1.0, a)))


def combined_distance(data: Dataset, geo_weight: float = 0.5, feat_weight: float = 0.5) -> DistanceMatrix:
    """Convex mix of max-scaled haversine distance and RMS feature distance.

    ``d[i, j] = geo_weight * hav(i, j) / max(hav) + feat_weight * ||f_i - f_j|| / sqrt(F)``
    where ``f`` are the normalised feature columns. When every point is
    co-located the geographic term is taken as zero.
    """
    if not data.is_normalized:
        raise DataError("combined_distance requires a normalized dataset")
    if len(data) < 2:
        raise DataError("need at least two records")
    if geo_weight < 0 or feat_weight < 0 or not math.isclose(geo_weight + feat_weight, 1.0, abs_tol=1e-12):
        raise ValueError("geo_weight and feat_weight must be non-negative and sum to 1")

    hav = haversine_matrix(data.coords)
    hmax = hav.max()
    geo = hav / hmax if hmax > 0 else np.zeros_like(hav)

    F = data.matrix()
    diff = F[:, None, :] - F[None, :, :]
    feat = np.sqrt((diff**2).sum(axis=-1)) / math.sqrt(F.shape[1])

    d = geo_weight * geo + feat_weight * feat
    d = np.clip(0.5 * (d + d.T), 0.0, 1.0)
    np.fill_diagonal(d, 0.0)
    return DistanceMatrix(d, geo_weight, feat_weight)
