"""Partition scoring and the method-comparison report."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from math import comb
from typing import Mapping

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.base import clone

from ._validation import check_labels
from .similarity import DistanceMatrix

TABLE_METHODS = ("DBSCAN", "HDBSCAN", "Quantum Clustering")


def _contingency(pred: np.ndarray, truth: np.ndarray):
    p_ids, p_inv = np.unique(pred, return_inverse=True)
    t_ids, t_inv = np.unique(truth, return_inverse=True)
    table = np.zeros((p_ids.size, t_ids.size), dtype=np.int64)
    np.add.at(table, (p_inv, t_inv), 1)
    return p_ids, t_ids, table


def permutation_accuracy(pred, truth) -> float:
    """Best one-to-one matching accuracy; predicted noise (-1) never matches."""
    truth = check_labels(truth, name="truth")
    pred = check_labels(pred, truth.size, name="pred")
    if (truth < 0).any():
        raise ValueError("truth must not contain noise labels")
    if truth.size == 0:
        raise ValueError("empty labelling")
    p_ids, _, table = _contingency(pred, truth)
    table = table[p_ids >= 0]
    if table.size == 0:
        return 0.0
    rows, cols = linear_sum_assignment(table, maximize=True)
    return float(table[rows, cols].sum()) / truth.size


def adjusted_rand_index(pred, truth) -> float:
    """Pair-counting ARI; noise is treated as an ordinary label."""
    truth = check_labels(truth, name="truth")
    pred = check_labels(pred, truth.size, name="pred")
    n = truth.size
    if n < 2:
        raise ValueError("ARI needs at least two points")
    _, _, table = _contingency(pred, truth)
    index = sum(comb(int(v), 2) for v in table.ravel())
    a = sum(comb(int(v), 2) for v in table.sum(axis=1))
    b = sum(comb(int(v), 2) for v in table.sum(axis=0))
    expected = a * b / comb(n, 2)
    max_index = (a + b) / 2
    if max_index == expected:
        return 1.0
    return float((index - expected) / (max_index - expected))


def silhouette(dm: DistanceMatrix, labels) -> float:
    """Mean silhouette over non-noise points; singleton members score 0."""
    labels = check_labels(labels, dm.n)
    keep = np.flatnonzero(labels >= 0)
    lab = labels[keep]
    ids = np.unique(lab)
    if ids.size < 2:
        raise ValueError("silhouette needs at least two clusters among non-noise points")
    d = dm.d[np.ix_(keep, keep)]
    scores = np.zeros(keep.size)
    for i in range(keep.size):
        own = lab == lab[i]
        if own.sum() == 1:
            continue
        a = d[i, own].sum() / (own.sum() - 1)
        b = min(d[i, lab == c].mean() for c in ids if c != lab[i])
        m = max(a, b)
        scores[i] = (b - a) / m if m > 0 else 0.0
    return float(scores.mean())


def granularity(n_clusters: int, median_cluster_size: float, n: int) -> str:
    if n_clusters <= 2:
        return "Low"
    if median_cluster_size > n / 4:
        return "Medium"
    return "High"


@dataclass
class MethodRow:
    method: str
    accuracy: float | None = None
    ari: float | None = None
    silhouette: float | None = None
    wall_time_seconds: float | None = None
    n_clusters: int | None = None
    median_cluster_size: float | None = None
    granularity: str | None = None
    error: str | None = None


@dataclass
class BenchmarkReport:
    n_points: int
    rows: list[MethodRow] = field(default_factory=list)

    def row(self, method: str) -> MethodRow:
        return next(r for r in self.rows if r.method == method)

    def to_dict(self) -> dict:
        return {"n_points": self.n_points, "rows": [asdict(r) for r in self.rows]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, obj: Mapping) -> "BenchmarkReport":
        return cls(int(obj.get("n_points", 0)), [MethodRow(**r) for r in obj["rows"]])

    def to_markdown(self) -> str:
        return render_markdown(self)


def _cell(value, fmt):
    return "n/a" if value is None else fmt(value)


def render_markdown(report: BenchmarkReport) -> str:
    """Three-row comparison table: accuracy, time, granularity."""
    rows = report.rows
    lines = [
        "| Metric | " + " | ".join(r.method for r in rows) + " |",
        "| --- |" + " --- |" * len(rows),
        "| Clustering Accuracy | " + " | ".join(_cell(r.accuracy, lambda v: f"{v * 100:.0f}%") for r in rows) + " |",
        "| Time Efficiency | " + " | ".join(_cell(r.wall_time_seconds, lambda v: f"{v:.1f} s") for r in rows) + " |",
        "| Cluster Granularity | " + " | ".join(_cell(r.granularity, str) for r in rows) + " |",
    ]
    return "\n".join(lines) + "\n"


def benchmark(dm: DistanceMatrix, truth, methods: Mapping[str, object], warmup: bool = True) -> BenchmarkReport:
    """Fit each clustering estimator on ``dm`` and score it.

    ``methods`` maps a display name to an unfitted estimator exposing
    ``fit_predict``. An untimed warm-up fit precedes the timed one. Failures
    are recorded in the row's ``error`` field.
    """
    truth = None if truth is None else check_labels(truth, dm.n, name="truth")
    report = BenchmarkReport(dm.n)
    for name, est in methods.items():
        row = MethodRow(name)
        try:
            if warmup:
                clone(est).fit_predict(dm)
            t0 = time.perf_counter()
            labels = np.asarray(clone(est).fit_predict(dm))
            row.wall_time_seconds = time.perf_counter() - t0
            sizes = np.bincount(labels[labels >= 0]) if (labels >= 0).any() else np.array([], dtype=int)
            row.n_clusters = int(sizes.size)
            row.median_cluster_size = float(np.median(sizes)) if sizes.size else 0.0
            row.granularity = granularity(row.n_clusters, row.median_cluster_size, dm.n)
            if truth is not None:
                row.accuracy = permutation_accuracy(labels, truth)
                row.ari = adjusted_rand_index(labels, truth)
            if row.n_clusters >= 2:
                row.silhouette = silhouette(dm, labels)
        except Exception as exc:  # recorded, not fatal
            row.error = f"{type(exc).__name__}: {exc}"
        report.rows.append(row)
    return report
