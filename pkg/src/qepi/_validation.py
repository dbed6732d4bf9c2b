"""Input checks shared by the estimators."""

from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.utils.validation import check_array

from .similarity import DistanceMatrix

METRICS = ("precomputed", "euclidean")


def as_distance_matrix(X, metric: str = "precomputed") -> DistanceMatrix:
    """Coerce estimator input to a :class:`DistanceMatrix`.

    ``X`` may already be a DistanceMatrix, a square precomputed matrix, or a
    sample-by-feature array (``metric="euclidean"``).
    """
    if isinstance(X, DistanceMatrix):
        return X
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}, got {metric!r}")
    X = check_array(X, dtype=float, ensure_min_samples=2)
    if metric == "euclidean":
        d = cdist(X, X)
        d = 0.5 * (d + d.T)
        np.fill_diagonal(d, 0.0)
        return DistanceMatrix(d, 1.0, 0.0)
    if X.shape[0] != X.shape[1]:
        raise ValueError(f"precomputed distances must be square, got shape {X.shape}")
    return DistanceMatrix(X, 1.0, 0.0)


def check_labels(labels, n: int | None = None, name: str = "labels") -> np.ndarray:
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if not np.issubdtype(arr.dtype, np.integer):
        if arr.size and not np.all(np.equal(np.mod(arr, 1), 0)):
            raise ValueError(f"{name} must be integers")
        arr = arr.astype(int)
    if n is not None and arr.size != n:
        raise ValueError(f"{name} has length {arr.size}, expected {n}")
    return arr
