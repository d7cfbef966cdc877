import logging
import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from ilcforecast.spatial import (
    WeightError, WeightMatrix, centdist_weights, distance_matrix, gower_dissimilarity,
    gower_weights, haversine, knn4_weights, knn_weights, spatial_lag,
)

# points on the equator: one degree of longitude is the same distance everywhere
DEG_KM = math.pi * 6371.0088 / 180


def equator(lons, ids=None):
    ids = ids or list(range(1, len(lons) + 1))
    return {i: (0.0, float(lon)) for i, lon in zip(ids, lons)}


def check_rows(w: WeightMatrix):
    assert np.all(np.diag(w.weights) == 0)
    sums = w.weights.sum(axis=1)
    assert np.all((np.abs(sums - 1) < 1e-9) | (sums == 0))


def test_haversine_equator_degree():
    assert haversine(0.0, 0.0, 0.0, 1.0) == pytest.approx(DEG_KM, rel=1e-12)
    # quarter of a meridian
    assert haversine(0.0, 0.0, 90.0, 0.0) == pytest.approx(math.pi * 6371.0088 / 2, rel=1e-12)


def test_knn4_five_on_a_line():
    w = knn4_weights(equator([0, 1, 2, 3, 4]))
    check_rows(w)
    off = ~np.eye(5, dtype=bool)
    assert np.all(w.weights[off] == 0.25)


def test_knn4_three_countries():
    w = knn4_weights(equator([0, 1, 2]))
    assert ((w.weights > 0).sum(axis=1) == 2).all()
    assert set(np.unique(w.weights[w.weights > 0])) == {0.5}


def test_knn4_matches_brute_force():
    rng = np.random.default_rng(3)
    pts = {i: (rng.uniform(-40, 40), rng.uniform(-60, 60)) for i in range(10, 18)}
    w = knn4_weights(pts)
    check_rows(w)
    ids = sorted(pts)
    for a, i in enumerate(ids):
        d = []
        for j in ids:
            if j != i:
                (la1, lo1), (la2, lo2) = pts[i], pts[j]
                # independent great-circle via the spherical law of cosines
                c = (math.sin(math.radians(la1)) * math.sin(math.radians(la2))
                     + math.cos(math.radians(la1)) * math.cos(math.radians(la2))
                     * math.cos(math.radians(lo2 - lo1)))
                d.append((math.acos(max(-1.0, min(1.0, c))), j))
        nearest = {j for _, j in sorted(d)[:4]}
        got = {ids[b] for b in np.flatnonzero(w.weights[a])}
        assert got == nearest
        assert np.all(w.weights[a][w.weights[a] > 0] == 0.25)


def test_knn_tie_break_by_id():
    # row 0 sees five neighbours at the same distance; the four lowest ids win
    ids = np.array([50, 40, 30, 20, 10, 60])
    dist = np.ones((6, 6)) - np.eye(6)
    w = knn_weights(ids, dist, 4)
    assert sorted(ids[np.flatnonzero(w[0])].tolist()) == [10, 20, 30, 40]


def test_missing_centroid_excluded(caplog):
    with caplog.at_level(logging.WARNING):
        w = knn4_weights({1: (0.0, 0.0), 2: (0.0, 1.0), 3: (float("nan"), 1.0)})
    assert w.ids.tolist() == [1, 2]
    assert "no centroid" in caplog.text


def test_centdist_two_and_three():
    w = centdist_weights(equator([0, 1]))
    assert w.weights.tolist() == [[0.0, 1.0], [1.0, 0.0]]
    w = centdist_weights(equator([0, 1, 2]))
    np.testing.assert_allclose(w.weights[0], [0, 2 / 3, 1 / 3], atol=1e-12)
    np.testing.assert_allclose(w.weights[1], [0.5, 0, 0.5], atol=1e-12)


def test_centdist_brute_force():
    rng = np.random.default_rng(5)
    pts = {i: (rng.uniform(-30, 30), rng.uniform(-30, 30)) for i in range(6)}
    w = centdist_weights(pts)
    check_rows(w)
    ids, d = distance_matrix(pts)
    assert np.allclose(d, d.T)
    for a in range(6):
        inv = [0.0 if a == b else 1.0 / d[a, b] for b in range(6)]
        np.testing.assert_allclose(w.weights[a], np.array(inv) / sum(inv), rtol=1e-12)


def test_centdist_coincident_error():
    with pytest.raises(WeightError, match="coincident"):
        centdist_weights({1: (0.0, 0.0), 2: (0.0, 0.0), 3: (1.0, 1.0)})


def test_gower_hand_computed():
    f = pd.DataFrame({"a": [0.0, 1.0, 2.0, 4.0], "b": [10.0, 10.0, 20.0, 30.0]}, index=[1, 2, 3, 4])
    d = gower_dissimilarity(f)
    ra, rb = 4.0, 20.0
    for i in range(4):
        for j in range(4):
            expect = (abs(f.a.iloc[i] - f.a.iloc[j]) / ra + abs(f.b.iloc[i] - f.b.iloc[j]) / rb) / 2
            assert d[i, j] == pytest.approx(expect, abs=1e-15)


def test_gower_mixed_and_missing():
    f = pd.DataFrame({"num": [0.0, 10.0, np.nan], "cat": ["x", "y", "x"]}, index=[1, 2, 3])
    d = gower_dissimilarity(f)
    assert d[0, 1] == pytest.approx((1.0 + 1.0) / 2)
    assert d[0, 2] == 0.0            # only the categorical feature is comparable
    assert d[1, 2] == 1.0


def test_gower_identity_and_empty_rows(caplog):
    f = pd.DataFrame({"a": [0.0, 0.0, 1.0]}, index=[1, 2, 3])
    with caplog.at_level(logging.WARNING):
        w = gower_weights(f, "pol")
    check_rows(w)
    assert w.weights[0].tolist() == [0.0, 1.0, 0.0]     # identical neighbour takes all weight
    assert w.empty_rows.tolist() == [3]                 # maximally dissimilar to everyone
    assert w.label == "gower.pol"


def test_gower_constant_features_error():
    with pytest.raises(WeightError, match="constant"):
        gower_weights(pd.DataFrame({"a": [1.0, 1.0]}, index=[1, 2]), "econ")


def lag_panel(values: dict[int, list[float]]):
    rows = []
    for cid, vals in values.items():
        for m, v in enumerate(vals, start=1):
            rows.append({"country_id": cid, "year": 2001, "month": m, "x": v})
    return pd.DataFrame(rows)


def test_spatial_lag_constant_and_two_country():
    w = knn4_weights(equator([0, 1, 2, 3, 4]))
    out = spatial_lag(lag_panel({i: [8.0] for i in range(1, 6)}), "x", w)
    assert out["W.knn4.x"].tolist() == [8.0] * 5
    w2 = centdist_weights(equator([0, 1]))
    out2 = spatial_lag(lag_panel({1: [3.0], 2: [10.0]}), "x", w2)
    assert out2.set_index("country_id")["W.centdist.std.x"][1] == 10.0


def test_spatial_lag_brute_force_with_missing():
    rng = np.random.default_rng(9)
    pts = {i: (rng.uniform(-20, 20), rng.uniform(-20, 20)) for i in range(1, 6)}
    w = centdist_weights(pts)
    vals = {i: list(rng.normal(size=3)) for i in range(1, 6)}
    vals[2][1] = np.nan
    out = spatial_lag(lag_panel(vals), "x", w)
    W = w.to_frame()
    for r in out.itertuples():
        num = den = 0.0
        for j in range(1, 6):
            v = vals[j][r.month - 1]
            if j != r.country_id and not np.isnan(v):
                num += W.loc[r.country_id, j] * v
                den += W.loc[r.country_id, j]
        assert r[-1] == pytest.approx(num / den, rel=1e-12)


def test_spatial_lag_all_neighbors_missing():
    w = centdist_weights(equator([0, 1]))
    out = spatial_lag(lag_panel({1: [1.0], 2: [np.nan]}), "x", w)
    assert np.isnan(out.set_index("country_id")["W.centdist.std.x"][1])


def test_spatial_lag_uncovered_country():
    w = centdist_weights(equator([0, 1]))
    with pytest.raises(WeightError, match="does not cover"):
        spatial_lag(lag_panel({1: [1.0], 7: [2.0]}), "x", w)


@given(st.lists(st.tuples(st.floats(-60, 60), st.floats(-170, 170)), min_size=2, max_size=8,
                unique=True),
       st.floats(-100, 100))
@settings(max_examples=40, deadline=None)
def test_constant_covariate_lag_is_constant(pts, c):
    cent = {i: p for i, p in enumerate(pts, start=1)}
    ids, d = distance_matrix(cent)
    if (d + np.eye(len(ids)) <= 1e-6).any():
        return
    w = knn4_weights(cent)
    check_rows(w)
    out = spatial_lag(lag_panel({i: [c] for i in cent}), "x", w)
    np.testing.assert_allclose(out["W.knn4.x"], c, rtol=1e-12, atol=1e-12)
