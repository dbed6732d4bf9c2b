"""Loading, cleaning and synthesising ZIP-level spatiotemporal records.

A :class:`Dataset` is an immutable, ordered collection of :class:`ZipRecord`
rows. Missing numeric values are stored as ``None`` on the record and exposed
as ``NaN`` through the columnar accessors, so a missing cell can never be
mistaken for a zero.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

BASE_COLUMNS = (
    "zip",
    "year",
    "latitude",
    "longitude",
    "housing_instability",
    "stigma_index",
    "hiv_rate",
)
PREP_COLUMN = "prep_rate"
CORE_FEATURES = ("housing_instability", "stigma_index", "hiv_rate")

EARTH_RADIUS_KM = 6371.0


class DataError(ValueError):
    """Raised when input records violate the dataset schema."""


@dataclass(frozen=True)
class ZipRecord:
    zip: str
    year: int
    lat: float | None
    lon: float | None
    housing_instability: float | None
    stigma_index: float | None
    hiv_rate: float | None
    prep_rate: float | None = None

    def __post_init__(self):
        if not self.zip:
            raise DataError("zip must be non-empty")
        if not 1980 <= self.year <= 2100:
            raise DataError(f"year {self.year} outside [1980, 2100]")
        if self.lat is not None and not -90.0 <= self.lat <= 90.0:
            raise DataError(f"latitude {self.lat} outside [-90, 90]")
        if self.lon is not None and not -180.0 <= self.lon <= 180.0:
            raise DataError(f"longitude {self.lon} outside [-180, 180]")

    def get(self, name: str) -> float | None:
        return getattr(self, name)


@dataclass(frozen=True)
class Dataset:
    """Ordered ZIP-year records plus normalisation bookkeeping.

    Parameters
    ----------
    records : tuple of ZipRecord
        Row order is significant; every downstream index refers to it.
    has_prep : bool
        Whether the optional ``prep_rate`` column is part of the schema.
    normalization : mapping or None
        ``feature -> (min, max)`` used by :func:`minmax_normalize`, or
        ``None`` for raw data.
    """

    records: tuple[ZipRecord, ...]
    has_prep: bool = False
    normalization: Mapping[str, tuple[float, float]] | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))

    def __len__(self) -> int:
        return len(self.records)

    @property
    def features(self) -> tuple[str, ...]:
        """Numeric feature columns subject to imputation and normalisation."""
        return CORE_FEATURES + ((PREP_COLUMN,) if self.has_prep else ())

    @property
    def columns(self) -> tuple[str, ...]:
        return BASE_COLUMNS + ((PREP_COLUMN,) if self.has_prep else ())

    @property
    def normalization_state(self) -> str:
        return "raw" if self.normalization is None else "normalized"

    @property
    def is_normalized(self) -> bool:
        return self.normalization is not None

    def column(self, name: str) -> np.ndarray:
        if name == "latitude":
            name = "lat"
        elif name == "longitude":
            name = "lon"
        return np.array(
            [np.nan if (v := r.get(name)) is None else v for r in self.records],
            dtype=float,
        )

    def matrix(self, names: Sequence[str] | None = None) -> np.ndarray:
        names = self.features if names is None else names
        if len(self) == 0:
            return np.empty((0, len(names)))
        return np.column_stack([self.column(n) for n in names])

    @property
    def missing_mask(self) -> np.ndarray:
        """Boolean ``(n_records, n_features)`` mask, True where missing."""
        return np.isnan(self.matrix())

    @property
    def coords(self) -> np.ndarray:
        return self.matrix(("lat", "lon"))

    @property
    def zips(self) -> list[str]:
        return [r.zip for r in self.records]

    @property
    def years(self) -> list[int]:
        return sorted({r.year for r in self.records})

    def select(self, indices: Iterable[int]) -> "Dataset":
        recs = [self.records[i] for i in indices]
        return replace(self, records=tuple(recs))

    def select_year(self, year: int) -> "Dataset":
        return self.select(i for i, r in enumerate(self.records) if r.year == year)

    def with_columns(self, values: Mapping[str, np.ndarray], **kwargs) -> "Dataset":
        """Return a copy with the given feature columns replaced (NaN -> missing)."""
        recs = []
        for i, r in enumerate(self.records):
            upd = {}
            for name, col in values.items():
                v = float(col[i])
                upd[name] = None if math.isnan(v) else v
            recs.append(replace(r, **upd))
        return replace(self, records=tuple(recs), **kwargs)


# --------------------------------------------------------------------------
# CSV I/O


def _parse_float(cell: str, column: str, lineno: int) -> float | None:
    cell = cell.strip()
    if cell == "":
        return None
    try:
        v = float(cell)
    except ValueError:
        raise DataError(f"row {lineno}: non-numeric value {cell!r} in column {column}") from None
    if not math.isfinite(v):
        raise DataError(f"row {lineno}: non-finite value {cell!r} in column {column}")
    return v


def parse_dataset(text: str) -> Dataset:
    """Parse CSV text into a raw :class:`Dataset`.

    Row numbers in error messages are 1-based file lines (the header is
    line 1).
    """
    reader = csv.reader(io.StringIO(text.replace("\r\n", "\n")))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError("empty input: missing header row") from None
    if tuple(header) == BASE_COLUMNS:
        has_prep = False
    elif tuple(header) == BASE_COLUMNS + (PREP_COLUMN,):
        has_prep = True
    else:
        raise DataError(f"unexpected header {','.join(header)!r}; expected {','.join(BASE_COLUMNS)}[,{PREP_COLUMN}]")

    records = []
    for lineno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and row[0].strip() == ""):
            continue
        if len(row) != len(header):
            raise DataError(f"row {lineno}: expected {len(header)} columns, got {len(row)}")
        zip_code = row[0].strip()
        if not zip_code:
            raise DataError(f"row {lineno}: empty zip")
        try:
            year = int(row[1].strip())
        except ValueError:
            raise DataError(f"row {lineno}: non-integer year {row[1]!r}") from None
        vals = [_parse_float(c, name, lineno) for c, name in zip(row[2:], header[2:])]
        lat, lon = vals[0], vals[1]
        if lat is not None and not -90.0 <= lat <= 90.0:
            raise DataError(f"row {lineno}: latitude {lat} out of bounds [-90, 90]")
        if lon is not None and not -180.0 <= lon <= 180.0:
            raise DataError(f"row {lineno}: longitude {lon} out of bounds [-180, 180]")
        try:
            rec = ZipRecord(zip_code, year, *vals)
        except DataError as exc:
            raise DataError(f"row {lineno}: {exc}") from None
        records.append(rec)
    return Dataset(tuple(records), has_prep=has_prep)


def _fmt(v: float | None) -> str:
    return "" if v is None else repr(float(v))


def serialize_dataset(data: Dataset) -> str:
    """Inverse of :func:`parse_dataset` (LF line endings)."""
    lines = [",".join(data.columns)]
    for r in data.records:
        cells = [r.zip, str(r.year), _fmt(r.lat), _fmt(r.lon)]
        cells += [_fmt(r.get(f)) for f in data.features]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def read_dataset(path) -> Dataset:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_dataset(fh.read())


def write_dataset(data: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(serialize_dataset(data))


# --------------------------------------------------------------------------
# Cleaning


def haversine_matrix(coords: np.ndarray) -> np.ndarray:
    """All-pairs great-circle distances (km) for an ``(n, 2)`` lat/lon array."""
    lat = np.radians(coords[:, 0])[:, None]
    lon = np.radians(coords[:, 1])[:, None]
    dlat = lat - lat.T
    dlon = lon - lon.T
    a = np.sin(dlat / 2) ** 2 + np.cos(lat) * np.cos(lat.T) * np.sin(dlon / 2) ** 2
    d = 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))
    np.fill_diagonal(d, 0.0)
    return d


def drop_incomplete(data: Dataset) -> tuple[Dataset, int]:
    """Remove records missing geo coordinates or more than half their features."""
    mask = data.missing_mask
    geo_missing = np.isnan(data.coords).any(axis=1)
    too_sparse = mask.sum(axis=1) > 0.5 * mask.shape[1]
    keep = ~(geo_missing | too_sparse)
    n_dropped = int((~keep).sum())
    return data.select(np.flatnonzero(keep)), n_dropped


def knn_impute(data: Dataset, k: int = 5) -> Dataset:
    """Fill missing feature cells with the mean of the k nearest donors.

    Severely incomplete records are dropped first (see
    :func:`drop_incomplete`). Distance between records combines the
    Euclidean distance over z-scored features present in both records with
    ``haversine_km / 100`` as one extra coordinate. Donor ties are broken by
    lower record index.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if data.is_normalized:
        logger.debug("imputing an already-normalised dataset")
    data, n_dropped = drop_incomplete(data)
    if n_dropped:
        logger.info("dropped %d severely incomplete record(s)", n_dropped)

    X = data.matrix()
    missing = np.isnan(X)
    if not missing.any():
        return data

    mu = np.nanmean(X, axis=0)
    sd = np.nanstd(X, axis=0)
    sd[~np.isfinite(sd) | (sd == 0)] = 1.0
    Z = (X - mu) / sd
    geo = haversine_matrix(data.coords) / 100.0

    out = X.copy()
    n_feat = X.shape[1]
    for f in range(n_feat):
        donors = np.flatnonzero(~missing[:, f])
        if len(donors) < k:
            raise DataError(
                f"feature {data.features[f]!r}: only {len(donors)} donor record(s) for k={k}"
            )
        others = [g for g in range(n_feat) if g != f]
        for i in np.flatnonzero(missing[:, f]):
            diff = Z[donors][:, others] - Z[i, others]
            both = ~np.isnan(diff)
            sq = np.where(both, diff, 0.0) ** 2
            dist = np.sqrt(sq.sum(axis=1) + geo[i, donors] ** 2)
            order = np.lexsort((donors, dist))[:k]
            out[i, f] = X[donors[order], f].mean()
    return data.with_columns(dict(zip(data.features, out.T)))


def minmax_normalize(data: Dataset) -> Dataset:
    """Scale each feature column to [0, 1]; constant columns map to 0.

    Latitude and longitude are left in degrees so geographic distances stay
    physical.
    """
    if data.is_normalized:
        raise DataError("dataset is already normalized")
    X = data.matrix()
    if np.isnan(X).any():
        raise DataError("cannot normalize: missing values present (impute first)")
    if len(data) == 0:
        raise DataError("cannot normalize an empty dataset")
    lo = X.min(axis=0)
    hi = X.max(axis=0)
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    scaled = np.where(span > 0, (X - lo) / safe, 0.0)
    scaled = np.clip(scaled, 0.0, 1.0)
    stats = {f: (float(a), float(b)) for f, a, b in zip(data.features, lo, hi)}
    return data.with_columns(dict(zip(data.features, scaled.T)), normalization=stats)


# --------------------------------------------------------------------------
# Synthetic data


@dataclass(frozen=True)
class SynthConfig:
    n_points: int = 100
    k_planted: int = 3
    years: tuple[int, int] = (2022, 2022)
    seed: int = 0
    missing_fraction: float = 0.0
    noise_sd: float = 0.05
    housing_weight: float = 2.0
    stigma_weight: float = 1.0

    def __post_init__(self):
        if self.k_planted < 1:
            raise ValueError("k_planted must be >= 1")
        if self.n_points < self.k_planted:
            raise ValueError(f"n_points ({self.n_points}) must be >= k_planted ({self.k_planted})")
        if self.n_points > 69999:
            raise ValueError("n_points too large for 5-digit zip codes")
        if not 0.0 <= self.missing_fraction < 1.0:
            raise ValueError("missing_fraction must lie in [0, 1)")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be non-negative")
        y0, y1 = self.years
        if not 1980 <= y0 <= y1 <= 2100:
            raise ValueError(f"invalid year range {y0}:{y1}")


def _logistic(x):
    return 1.0 / (1.0 + np.exp(-x))


def generate_synthetic(cfg: SynthConfig) -> tuple[Dataset, np.ndarray]:
    """Draw a planted-cluster dataset and its per-record blob labels.

    Blobs sit on a ring of radius 0.5 degrees around central Atlanta, with
    geographic spread ``0.5 * noise_sd`` degrees. Each blob has its own SDoH
    feature means, a yearly drift, and an HIV-rate offset; the HIV rate is
    ``logistic(w_h * housing + w_s * stigma + offset + noise)``.

    Records are ordered year-major, then by zip.
    """
    rng = np.random.default_rng(cfg.seed)
    n, k = cfg.n_points, cfg.k_planted
    years = list(range(cfg.years[0], cfg.years[1] + 1))
    sd = cfg.noise_sd

    phase = rng.uniform(0.0, 2 * np.pi)
    angles = phase + 2 * np.pi * np.arange(k) / k
    radius = 0.5 if k > 1 else 0.0
    centers = np.column_stack([33.75 + radius * np.sin(angles), -84.39 + radius * np.cos(angles)])

    labels = rng.permutation(np.arange(n) % k)
    geo = centers[labels] + 0.5 * sd * rng.standard_normal((n, 2))

    mu = rng.uniform(0.2, 0.8, size=(k, 3))  # housing, stigma, prep
    drift = rng.uniform(-0.03, 0.05, size=(k, 2))
    offset = rng.uniform(-2.0, -1.0, size=k)
    dev = sd * rng.standard_normal((n, 3))

    zips = [f"{30001 + i:05d}" for i in range(n)]
    records = []
    all_labels = []
    for t, year in enumerate(years):
        eps = sd * rng.standard_normal((n, 4))
        housing = np.clip(mu[labels, 0] + drift[labels, 0] * t + dev[:, 0] + 0.5 * eps[:, 0], 0, 1)
        stigma = np.clip(mu[labels, 1] + drift[labels, 1] * t + dev[:, 1] + 0.5 * eps[:, 1], 0, 1)
        prep = np.clip(mu[labels, 2] + dev[:, 2] + 0.5 * eps[:, 2], 0, 1)
        hiv = _logistic(
            cfg.housing_weight * housing + cfg.stigma_weight * stigma + offset[labels] + eps[:, 3]
        )
        vals = np.column_stack([housing, stigma, hiv, prep]).round(4)
        drop = rng.random(vals.shape) < cfg.missing_fraction
        for i in range(n):
            v = [None if drop[i, j] else float(vals[i, j]) for j in range(4)]
            records.append(
                ZipRecord(
                    zips[i],
                    year,
                    round(float(geo[i, 0]), 5),
                    round(float(geo[i, 1]), 5),
                    v[0],
                    v[1],
                    v[2],
                    v[3],
                )
            )
            all_labels.append(int(labels[i]))
    return Dataset(tuple(records), has_prep=True), np.asarray(all_labels, dtype=int)
