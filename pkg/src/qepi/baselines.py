"""DBSCAN and HDBSCAN over a precomputed distance matrix.

Both are O(n^2) and fully deterministic: scans run in point-index order and
every tie is broken towards the lower index.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin

from ._validation import as_distance_matrix
from .similarity import DistanceMatrix

NOISE = -1
_LAMBDA_MAX = 1e300  # stands in for 1/0 on zero-distance merges


def dbscan(dm: DistanceMatrix, eps: float, min_pts: int) -> np.ndarray:
    """Classic DBSCAN; a point's neighbourhood includes itself.

    Border points join the first cluster (in creation order) whose FIFO
    expansion reaches them.
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    d = dm.d
    n = dm.n
    adj = d <= eps
    core = adj.sum(axis=1) >= min_pts
    labels = np.full(n, NOISE)
    cluster = 0
    for i in range(n):
        if labels[i] != NOISE or not core[i]:
            continue
        labels[i] = cluster
        queue = deque([i])
        while queue:
            j = queue.popleft()
            if not core[j]:
                continue
            for m in np.flatnonzero(adj[j]):
                if labels[m] == NOISE:
                    labels[m] = cluster
                    queue.append(m)
        cluster += 1
    return labels


# --------------------------------------------------------------------------
# HDBSCAN


def core_distances(dm: DistanceMatrix, min_samples: int) -> np.ndarray:
    """Distance to the ``min_samples``-th nearest neighbour, self included."""
    if not 1 <= min_samples <= dm.n:
        raise ValueError(f"min_samples must lie in [1, {dm.n}]")
    return np.sort(dm.d, axis=1)[:, min_samples - 1]


def mutual_reachability(dm: DistanceMatrix, min_samples: int) -> np.ndarray:
    core = core_distances(dm, min_samples)
    mr = np.maximum(dm.d, np.maximum(core[:, None], core[None, :]))
    np.fill_diagonal(mr, 0.0)
    return mr


def prim_mst(w: np.ndarray) -> list[tuple[int, int, float]]:
    """Minimum spanning tree of a dense graph as ``(u, v, weight)`` with u < v.

    Grows from vertex 0; among equal keys the lower vertex index is attached
    first, and each vertex keeps the lowest-index tree neighbour offering its
    key.
    """
    n = w.shape[0]
    in_tree = np.zeros(n, dtype=bool)
    key = np.full(n, np.inf)
    parent = np.full(n, -1)
    key[0] = 0.0
    edges = []
    for _ in range(n):
        cand = np.where(in_tree, np.inf, key)
        v = int(np.argmin(cand))
        in_tree[v] = True
        if parent[v] >= 0:
            u = int(parent[v])
            edges.append((min(u, v), max(u, v), float(w[u, v])))
        closer = ~in_tree & (w[v] < key)
        key[closer] = w[v][closer]
        parent[closer] = v
    return edges


@dataclass
class CondensedTree:
    """Condensed cluster hierarchy.

    ``rows`` are ``(parent, child, lambda, child_size)``; cluster ids start
    at ``n_points`` (the root) and point ids are ``0..n_points-1``.
    """

    n_points: int
    rows: list[tuple[int, int, float, int]] = field(default_factory=list)
    stability: dict[int, float] = field(default_factory=dict)
    selected: list[int] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "n_points": self.n_points,
                "rows": [
                    {"parent": p, "child": c, "lambda": lam, "child_size": s} for p, c, lam, s in self.rows
                ],
                "stability": {str(k): v for k, v in self.stability.items()},
                "selected": self.selected,
            },
            indent=1,
        )


def _single_linkage(edges, n):
    """Merge MST edges in ascending order; returns per-merge (left, right, dist, size)."""
    parent = list(range(2 * n - 1))
    size = [1] * n + [0] * (n - 1)

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    merges = []
    for u, v, wt in sorted(edges, key=lambda e: (e[2], e[0], e[1])):
        a, b = find(u), find(v)
        node = n + len(merges)
        parent[a] = parent[b] = node
        size[node] = size[a] + size[b]
        merges.append((a, b, wt, size[node]))
    return merges


def _condense(merges, n, min_cluster_size):
    if n == 1:
        return []
    size = lambda node: 1 if node < n else merges[node - n][3]  # noqa: E731

    def leaves(node):
        out, stack = [], [node]
        while stack:
            x = stack.pop()
            if x < n:
                out.append(x)
            else:
                stack.extend(merges[x - n][:2])
        return sorted(out)

    root = 2 * n - 2
    relabel = {root: n}
    next_id = n + 1
    rows = []
    queue = deque([root])
    while queue:
        node = queue.popleft()
        left, right, dist, _ = merges[node - n]
        lam = 1.0 / dist if dist > 0 else _LAMBDA_MAX
        me = relabel[node]
        big = [c for c in (left, right) if size(c) >= min_cluster_size]
        if len(big) == 2:
            for c in (left, right):
                relabel[c] = next_id
                rows.append((me, next_id, lam, size(c)))
                next_id += 1
                if c >= n:
                    queue.append(c)
            continue
        for c in (left, right):
            if c in big:
                relabel[c] = me
                if c >= n:
                    queue.append(c)
            else:
                rows.extend((me, p, lam, 1) for p in leaves(c))
    return rows


def _select_eom(rows, n, allow_single_cluster):
    birth = {n: 0.0}
    children: dict[int, list[int]] = {}
    for p, c, lam, s in rows:
        if c >= n:
            birth[c] = lam
            children.setdefault(p, []).append(c)
    stability = {c: 0.0 for c in birth}
    for p, c, lam, s in rows:
        stability[p] += (lam - birth[p]) * s
    raw = dict(stability)

    selected = {}
    for c in sorted(birth, reverse=True):
        if c == n and not allow_single_cluster:
            continue
        kids = children.get(c, [])
        sub = sum(stability[k] for k in kids)
        if kids and not stability[c] > sub:
            selected[c] = False
            stability[c] = sub
        else:
            selected[c] = True
            stack = list(kids)
            while stack:
                x = stack.pop()
                selected[x] = False
                stack.extend(children.get(x, []))
    return sorted(c for c, s in selected.items() if s), raw


def _labels_from_selection(rows, n, selected):
    parent_of = {c: p for p, c, _, _ in rows}
    cluster_id = {c: i for i, c in enumerate(selected)}
    labels = np.full(n, NOISE)
    for point in range(n):
        x = parent_of.get(point)
        while x is not None:
            if x in cluster_id:
                labels[point] = cluster_id[x]
                break
            x = parent_of.get(x)
    return labels


def hdbscan(
    dm: DistanceMatrix,
    min_cluster_size: int = 5,
    min_samples: int | None = None,
    allow_single_cluster: bool = False,
) -> tuple[np.ndarray, CondensedTree]:
    """HDBSCAN* with excess-of-mass cluster selection.

    Builds the mutual-reachability MST (Prim), its single-linkage hierarchy,
    condenses it with ``min_cluster_size``, and keeps clusters whose
    stability strictly exceeds that of their selected descendants. The root
    is eligible only with ``allow_single_cluster``.
    """
    min_samples = min_cluster_size if min_samples is None else min_samples
    if min_cluster_size < 2:
        raise ValueError("min_cluster_size must be >= 2")
    if min_samples < 1:
        raise ValueError("min_samples must be >= 1")
    n = dm.n
    if n < min_cluster_size:
        raise ValueError(f"need at least min_cluster_size={min_cluster_size} points, got {n}")
    mr = mutual_reachability(dm, min_samples)
    edges = prim_mst(mr)
    merges = _single_linkage(edges, n)
    rows = _condense(merges, n, min_cluster_size)
    selected, stability = _select_eom(rows, n, allow_single_cluster)
    labels = _labels_from_selection(rows, n, selected)
    return labels, CondensedTree(n, rows, stability, selected)


def default_eps(dm: DistanceMatrix, percentile: float = 60.0, min_pts: int = 4) -> float:
    """Percentile of the per-point ``min_pts``-distance (self counted), floored at 1e-12.

    With this radius roughly ``percentile`` percent of the points are core.
    """
    kth = min(max(min_pts, 1), dm.n) - 1
    kdist = np.sort(dm.d, axis=1)[:, kth]
    return max(float(np.percentile(kdist, percentile)), 1e-12)


class DBSCAN(ClusterMixin, BaseEstimator):
    """Density-based clustering with a fixed neighbourhood radius.

    Parameters
    ----------
    eps : float or None
        Neighbourhood radius; ``None`` uses ``eps_percentile`` of the
        ``min_pts``-nearest-neighbour distances.
    min_pts : int, default=4
    metric : {"precomputed", "euclidean"}
    eps_percentile : float, default=60.0
    """

    def __init__(self, eps=None, min_pts=4, metric="precomputed", eps_percentile=60.0):
        self.eps = eps
        self.min_pts = min_pts
        self.metric = metric
        self.eps_percentile = eps_percentile

    def fit(self, X, y=None):
        dm = as_distance_matrix(X, self.metric)
        self.eps_ = default_eps(dm, self.eps_percentile, self.min_pts) if self.eps is None else float(self.eps)
        self.labels_ = dbscan(dm, self.eps_, self.min_pts)
        return self


class HDBSCAN(ClusterMixin, BaseEstimator):
    """Hierarchical density-based clustering (excess-of-mass selection)."""

    def __init__(self, min_cluster_size=4, min_samples=4, metric="precomputed", allow_single_cluster=False):
        self.min_cluster_size = min_cluster_size
        self.min_samples = min_samples
        self.metric = metric
        self.allow_single_cluster = allow_single_cluster

    def fit(self, X, y=None):
        dm = as_distance_matrix(X, self.metric)
        self.labels_, self.condensed_tree_ = hdbscan(
            dm, self.min_cluster_size, self.min_samples, self.allow_single_cluster
        )
        return self
