import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.distance import cdist

from qepi.baselines import (
    DBSCAN,
    HDBSCAN,
    core_distances,
    dbscan,
    default_eps,
    hdbscan,
    mutual_reachability,
    prim_mst,
)
from qepi.metrics import adjusted_rand_index
from qepi.similarity import DistanceMatrix


def dm_of(points):
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return DistanceMatrix(cdist(x, x))


def naive_dbscan(d, eps, min_pts):
    """Reference: components of core points, borders to the lowest adjacent component."""
    n = len(d)
    nbr = [[j for j in range(n) if d[i][j] <= eps] for i in range(n)]
    core = [len(nbr[i]) >= min_pts for i in range(n)]
    comp = [-1] * n
    next_id = 0
    for i in range(n):
        if not core[i] or comp[i] >= 0:
            continue
        stack = [i]
        comp[i] = next_id
        while stack:
            j = stack.pop()
            for m in nbr[j]:
                if core[m] and comp[m] < 0:
                    comp[m] = next_id
                    stack.append(m)
        next_id += 1
    labels = list(comp)
    for i in range(n):
        if not core[i]:
            ids = [comp[j] for j in nbr[i] if core[j]]
            labels[i] = min(ids) if ids else -1
    return labels


def kruskal_weight(w):
    n = len(w)
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            x = parent[x]
        return x

    total = 0.0
    for wt, i, j in sorted((w[i][j], i, j) for i in range(n) for j in range(i + 1, n)):
        a, b = find(i), find(j)
        if a != b:
            parent[a] = b
            total += wt
    return total


def blobs(n_per, seed, sep=10.0, sd=0.3):
    rng = np.random.default_rng(seed)
    a = rng.normal(0, sd, (n_per, 2))
    b = rng.normal(0, sd, (n_per, 2)) + [sep, 0]
    return np.vstack([a, b]), np.repeat([0, 1], n_per)


# -- DBSCAN ------------------------------------------------------------------


def test_dbscan_1d_fixture():
    assert dbscan(dm_of([0, 0.1, 0.2, 5.0]), 0.15, 2).tolist() == [0, 0, 0, -1]


def test_dbscan_degenerate_cases():
    dm = dm_of([0, 1, 3, 7])
    assert dbscan(dm, 10.0, 1).tolist() == [0, 0, 0, 0]
    assert dbscan(dm, 10.0, 5).tolist() == [-1] * 4
    with pytest.raises(ValueError):
        dbscan(dm, 0.0, 2)


def test_dbscan_border_goes_to_first_cluster():
    # point 2 is a border reachable from both cores 0/1 and 3/4
    dm = dm_of([0.0, 0.5, 1.0, 1.5, 2.0])
    assert dbscan(dm, 0.5, 3).tolist() == naive_dbscan(dm.d, 0.5, 3)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 200), st.integers(0, 2**31), st.floats(0.05, 0.6), st.integers(1, 6))
def test_dbscan_matches_naive_reference(n, seed, eps, min_pts):
    x = np.random.default_rng(seed).uniform(0, 1, (n, 2))
    dm = dm_of(x)
    assert dbscan(dm, eps, min_pts).tolist() == naive_dbscan(dm.d, eps, min_pts)


def test_default_eps_is_knn_percentile():
    dm = dm_of([0, 1, 2, 4, 8])
    kd = np.sort(dm.d, axis=1)[:, 1]
    assert default_eps(dm, 50, 2) == pytest.approx(np.percentile(kd, 50))


# -- HDBSCAN pieces ----------------------------------------------------------


def test_min_samples_one_collapses_to_distance():
    dm = dm_of(np.random.default_rng(0).uniform(size=(10, 2)))
    assert np.all(core_distances(dm, 1) == 0)
    np.testing.assert_array_equal(mutual_reachability(dm, 1), dm.d)


def test_mutual_reachability_definition():
    dm = dm_of([0, 1, 3, 7])
    core = core_distances(dm, 2)
    assert core.tolist() == [1, 1, 2, 4]
    mr = mutual_reachability(dm, 2)
    assert mr[0, 1] == 1 and mr[2, 3] == 4 and mr[0, 2] == 3


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 40), st.integers(0, 2**31))
def test_prim_matches_kruskal(n, seed):
    dm = dm_of(np.random.default_rng(seed).uniform(size=(n, 2)))
    edges = prim_mst(dm.d)
    assert len(edges) == n - 1 and all(u < v for u, v, _ in edges)
    assert sum(w for *_, w in edges) == pytest.approx(kruskal_weight(dm.d), abs=1e-12)


def test_hdbscan_two_blobs():
    x, truth = blobs(20, 3)
    labels, tree = hdbscan(dm_of(x), 5, 5)
    assert len(set(labels) - {-1}) == 2
    assert adjusted_rand_index(labels, truth) >= 0.95
    assert tree.selected and all(c >= 40 for c in tree.selected)


def test_hdbscan_single_blob_never_mixed():
    x = np.random.default_rng(4).normal(size=(12, 2))
    labels, tree = hdbscan(dm_of(x), 12, 4)
    assert set(labels.tolist()) == {-1}
    labels, _ = hdbscan(dm_of(x), 12, 4, allow_single_cluster=True)
    assert len(set(labels.tolist())) == 1


@pytest.mark.parametrize("seed", range(6))
def test_hdbscan_agrees_with_sklearn(seed):
    from sklearn.cluster import HDBSCAN as SkHDBSCAN

    rng = np.random.default_rng(seed)
    centers = rng.uniform(0, 20, (3, 2))
    x = np.vstack([c + rng.normal(0, 0.6, (15, 2)) for c in centers])
    d = cdist(x, x)
    ours, _ = hdbscan(DistanceMatrix(d), 5, 5)
    ref = SkHDBSCAN(min_cluster_size=5, min_samples=5, metric="precomputed").fit_predict(d)
    assert adjusted_rand_index(ours, ref) == pytest.approx(1.0)


def test_condensed_tree_json():
    import json

    x, _ = blobs(8, 1)
    _, tree = hdbscan(dm_of(x), 4, 4)
    obj = json.loads(tree.to_json())
    assert obj["n_points"] == 16 and obj["rows"]
    assert {"parent", "child", "lambda", "child_size"} == set(obj["rows"][0])


def test_hdbscan_duplicates_do_not_crash():
    x = np.array([[0, 0]] * 6 + [[5, 5]] * 6, dtype=float)
    labels, _ = hdbscan(dm_of(x), 3, 3)
    assert labels[0] == labels[5] and labels[6] == labels[11]


# -- estimator wrappers ------------------------------------------------------


def test_estimators():
    x, truth = blobs(10, 7)
    est = DBSCAN(eps=1.5, min_pts=3, metric="euclidean")
    assert adjusted_rand_index(est.fit_predict(x), truth) == 1.0
    assert est.eps_ == 1.5
    assert DBSCAN(metric="euclidean").fit(x).eps_ > 0
    h = HDBSCAN(min_cluster_size=4, min_samples=4, metric="euclidean").fit(x)
    assert adjusted_rand_index(h.labels_, truth) == 1.0
    assert "min_cluster_size" in h.get_params()
    with pytest.raises(ValueError):
        DBSCAN(metric="cosine").fit(x)
