"""Spatial weight matrices and spatially lagged covariates.

Five schemes are supported: the 4 nearest neighbours (``knn4``), inverse
centroid distance (``centdist_std``) and Gower similarity on event,
political or economic profiles (``gower_events``, ``gower_pol``,
``gower_econ``). Every matrix has a zero diagonal and rows that have at
least one neighbour sum to one.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .panel_store import month_index

logger = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0088

SCHEME_LABELS = {
    "knn4": "knn4",
    "centdist_std": "centdist.std",
    "gower_events": "gower.events",
    "gower_pol": "gower.pol",
    "gower_econ": "gower.econ",
}


class WeightError(ValueError):
    pass


@dataclass(frozen=True)
class WeightMatrix:
    scheme: str
    ids: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if self.scheme not in SCHEME_LABELS:
            raise WeightError(f"unknown weighting scheme {self.scheme!r}")

    @property
    def label(self) -> str:
        return SCHEME_LABELS[self.scheme]

    @property
    def empty_rows(self) -> np.ndarray:
        """Ids of countries without any neighbour weight."""
        return self.ids[self.weights.sum(axis=1) == 0]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.weights, index=self.ids, columns=self.ids)


def haversine(lat1, lon1, lat2, lon2, radius=EARTH_RADIUS_KM):
    """Great-circle distance (km) between points given in degrees."""
    lat1, lon1, lat2, lon2 = map(np.radians, (lat1, lon1, lat2, lon2))
    a = (np.sin((lat2 - lat1) / 2) ** 2
         + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2)
    return 2 * radius * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def _centroid_arrays(centroids):
    if isinstance(centroids, pd.DataFrame):
        centroids = {int(r.country_id): (r.lat, r.lon) for r in centroids.itertuples()}
    usable = {}
    for cid, (lat, lon) in centroids.items():
        if lat is None or lon is None or math.isnan(lat) or math.isnan(lon):
            logger.warning("country %s has no centroid and is excluded", cid)
            continue
        usable[int(cid)] = (float(lat), float(lon))
    ids = np.array(sorted(usable), dtype=np.int64)
    lat = np.array([usable[i][0] for i in ids])
    lon = np.array([usable[i][1] for i in ids])
    return ids, lat, lon


def distance_matrix(centroids) -> tuple[np.ndarray, np.ndarray]:
    """Pairwise great-circle distances; returns ``(ids, D)`` sorted by id."""
    ids, lat, lon = _centroid_arrays(centroids)
    d = haversine(lat[:, None], lon[:, None], lat[None, :], lon[None, :])
    np.fill_diagonal(d, 0.0)
    return ids, d


def row_standardize(w: np.ndarray) -> np.ndarray:
    w = np.array(w, dtype=float)
    np.fill_diagonal(w, 0.0)
    sums = w.sum(axis=1, keepdims=True)
    return np.divide(w, sums, out=np.zeros_like(w), where=sums > 0)


def knn_weights(ids, dist: np.ndarray, k: int = 4) -> np.ndarray:
    n = len(ids)
    w = np.zeros((n, n))
    for i in range(n):
        others = [j for j in range(n) if j != i]
        # ties broken by lower country id
        others.sort(key=lambda j: (dist[i, j], ids[j]))
        nearest = others[:k]
        w[i, nearest] = 1.0 / len(nearest) if nearest else 0.0
    return w


def knn4_weights(centroids) -> WeightMatrix:
    ids, d = distance_matrix(centroids)
    if len(ids) < 2:
        raise WeightError("need at least 2 countries with centroids")
    return WeightMatrix("knn4", ids, knn_weights(ids, d, 4))


def inverse_distance_weights(ids, dist: np.ndarray) -> np.ndarray:
    off = ~np.eye(len(ids), dtype=bool)
    if (dist[off] <= 0).any():
        i, j = np.argwhere((dist <= 0) & off)[0]
        raise WeightError(f"coincident centroids for countries {ids[i]} and {ids[j]}")
    inv = np.zeros_like(dist)
    inv[off] = 1.0 / dist[off]
    return row_standardize(inv)


def centdist_weights(centroids) -> WeightMatrix:
    ids, d = distance_matrix(centroids)
    if len(ids) < 2:
        raise WeightError("need at least 2 countries with centroids")
    return WeightMatrix("centdist_std", ids, inverse_distance_weights(ids, d))


def gower_dissimilarity(features: pd.DataFrame) -> np.ndarray:
    """Gower dissimilarity between the rows of ``features``.

    Numeric columns contribute ``|x_i - x_j| / range``, other columns a 0/1
    mismatch. Pairs where a feature is missing for either row skip that
    feature; the mean is over the features available for the pair.
    """
    n = len(features)
    total = np.zeros((n, n))
    count = np.zeros((n, n))
    informative = 0
    for col in features.columns:
        s = features[col]
        if pd.api.types.is_numeric_dtype(s):
            x = s.to_numpy(dtype=float)
            ok = ~np.isnan(x)
            rng = np.nanmax(x) - np.nanmin(x) if ok.any() else 0.0
            if not rng > 0:
                continue
            informative += 1
            diff = np.abs(x[:, None] - x[None, :]) / rng
        else:
            x = s.to_numpy(dtype=object)
            ok = ~pd.isna(s).to_numpy()
            if len(set(x[ok])) > 1:
                informative += 1
            diff = (x[:, None] != x[None, :]).astype(float)
        both = ok[:, None] & ok[None, :]
        total += np.where(both, diff, 0.0)
        count += both
    if informative == 0:
        raise WeightError("all Gower features are constant (zero ranges)")
    d = np.divide(total, count, out=np.full((n, n), np.nan), where=count > 0)
    np.fill_diagonal(d, 0.0)
    return d


def gower_weights(features: pd.DataFrame, basis: str) -> WeightMatrix:
    """Row-standardised Gower similarity ``1 - d``; ``features`` is indexed by country id.

    Rows whose neighbours are all maximally dissimilar end up empty
    (see :attr:`WeightMatrix.empty_rows`).
    """
    scheme = f"gower_{basis}"
    if scheme not in SCHEME_LABELS:
        raise WeightError(f"unknown Gower basis {basis!r}")
    features = features.sort_index()
    ids = features.index.to_numpy(dtype=np.int64)
    sim = 1.0 - gower_dissimilarity(features)
    sim = np.nan_to_num(sim, nan=0.0)
    w = row_standardize(sim)
    empty = ids[w.sum(axis=1) == 0]
    if len(empty):
        logger.warning("Gower rows without any similar neighbour: %s", list(empty))
    return WeightMatrix(scheme, ids, w)


def country_feature_means(panel: pd.DataFrame, features, end=None) -> pd.DataFrame:
    """Per-country means of ``features`` over rows up to ``end`` (year, month)."""
    rows = panel
    if end is not None:
        idx = month_index(panel["year"].to_numpy(), panel["month"].to_numpy())
        rows = panel[idx <= month_index(*end)]
    return rows.groupby("country_id")[list(features)].mean().sort_index()


def spatial_lag(panel: pd.DataFrame, name: str, w: WeightMatrix,
                new_name: str | None = None) -> pd.DataFrame:
    """Add ``W.{scheme}.{name}``: the weighted neighbour average per country-month.

    Neighbours with a missing value are dropped and the remaining weights
    renormalised; if none remain the lag is missing.
    """
    if name not in panel.columns:
        raise KeyError(f"unknown covariate {name!r}")
    new_name = new_name or f"W.{w.label}.{name}"
    pos = {int(c): i for i, c in enumerate(w.ids)}
    uncovered = sorted(set(int(c) for c in panel["country_id"]) - set(pos))
    if uncovered:
        raise WeightError(f"weight matrix does not cover countries {uncovered}")

    n = len(w.ids)
    t = month_index(panel["year"].to_numpy(), panel["month"].to_numpy())
    periods, tpos = np.unique(t, return_inverse=True)
    cpos = np.array([pos[int(c)] for c in panel["country_id"]])
    grid = np.full((len(periods), n), np.nan)
    grid[tpos, cpos] = panel[name].to_numpy(dtype=float)

    present = ~np.isnan(grid)
    values = np.where(present, grid, 0.0)
    num = values @ w.weights.T
    den = present.astype(float) @ w.weights.T
    lag = np.divide(num, den, out=np.full_like(num, np.nan), where=den > 0)
    out = panel.copy()
    out[new_name] = lag[tpos, cpos]
    return out


def read_centroids(path) -> pd.DataFrame:
    cent = pd.read_csv(path)
    missing = [c for c in ("country_id", "lat", "lon") if c not in cent.columns]
    if missing:
        raise WeightError(f"centroid file is missing columns: {missing}")
    return cent
