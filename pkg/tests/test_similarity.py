import math

import numpy as np
import pytest

from qepi.ingest import DataError, Dataset, ZipRecord, minmax_normalize, parse_dataset
from qepi.similarity import DistanceMatrix, combined_distance, haversine_km
from test_ingest import SAMPLE_ROWS


def test_haversine_identity():
    assert haversine_km(33.76, -84.29, 33.76, -84.29) == 0.0


def test_haversine_one_degree_on_equator():
    assert haversine_km(0, 0, 0, 1) == pytest.approx(2 * math.pi * 6371 / 360, abs=0.01)


def test_haversine_sample_pair_vs_law_of_cosines():
    p1, p2, dl = map(math.radians, (33.76, 33.81, -84.28 + 84.29))
    central = math.acos(math.sin(p1) * math.sin(p2) + math.cos(p1) * math.cos(p2) * math.cos(dl))
    oracle = 6371 * central
    got = haversine_km(33.76, -84.29, 33.81, -84.28)
    assert got == pytest.approx(oracle, abs=1e-6)
    assert got == pytest.approx(5.63, abs=0.05)


def test_sample_pair_matches_hand_formula():
    data = minmax_normalize(parse_dataset(SAMPLE_ROWS))
    dm = combined_distance(data, 0.5, 0.5)
    # the two rows become opposite corners in each non-constant feature: [0,0,1] vs [1,1,0]
    feat = math.sqrt(3) / math.sqrt(3)
    geo = 1.0  # only pair, so it is the maximum
    assert dm[0, 1] == pytest.approx(0.5 * geo + 0.5 * feat, abs=1e-12)
    assert dm.n == 2


def _norm(rows):
    return minmax_normalize(Dataset(tuple(ZipRecord(*r) for r in rows)))


def test_duplicates_have_zero_distance():
    dm = combined_distance(_norm([("1", 2022, 33.0, -84.0, 0.1, 0.2, 0.3)] * 2 + [("3", 2022, 33.5, -84.2, 0.9, 0.2, 0.3)]))
    assert dm[0, 1] == 0.0


def test_geo_weight_one_is_pure_haversine():
    rng = np.random.default_rng(0)
    rows = [(str(i), 2022, 33.5 + rng.uniform(0, 0.5), -84.5 + rng.uniform(0, 0.5), *rng.uniform(0, 1, 3)) for i in range(8)]
    data = _norm(rows)
    dm = combined_distance(data, 1.0, 0.0)
    hav = np.array([[haversine_km(*a, *b) for b in data.coords] for a in data.coords])
    assert (np.argsort(dm.d, axis=1, kind="stable") == np.argsort(hav, axis=1, kind="stable")).all()
    np.testing.assert_allclose(dm.d, hav / hav.max(), atol=1e-12)


def test_colocated_points_geo_term_zero():
    dm = combined_distance(_norm([("1", 2022, 33.0, -84.0, 0.0, 0.2, 0.3), ("2", 2022, 33.0, -84.0, 1.0, 0.2, 0.3)]))
    assert dm[0, 1] == pytest.approx(0.5 / math.sqrt(3))


def test_distance_bounds_and_symmetry():
    rng = np.random.default_rng(1)
    rows = [(str(i), 2022, 33 + rng.uniform(), -84 - rng.uniform(), *rng.uniform(0, 1, 3)) for i in range(15)]
    d = combined_distance(_norm(rows), 0.3, 0.7).d
    assert np.all((d >= 0) & (d <= 1))
    assert np.array_equal(d, d.T)
    assert not d.flags.writeable


def test_errors():
    raw = parse_dataset(SAMPLE_ROWS)
    with pytest.raises(DataError):
        combined_distance(raw)
    with pytest.raises(DataError):
        combined_distance(minmax_normalize(raw).select([0]))
    with pytest.raises(ValueError):
        combined_distance(minmax_normalize(raw), 0.7, 0.7)
    with pytest.raises(ValueError):
        DistanceMatrix(np.array([[0, 1], [2, 0]]))
    with pytest.raises(ValueError):
        DistanceMatrix(np.array([[1.0, 1], [1, 0]]))


def test_csv_dump_parses_back():
    dm = DistanceMatrix(np.array([[0, 0.25], [0.25, 0]]))
    back = np.loadtxt(dm.to_csv().splitlines(), delimiter=",")
    np.testing.assert_array_equal(back, dm.d)
