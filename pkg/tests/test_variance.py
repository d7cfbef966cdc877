import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from ilcforecast.variance import decompose, variance_table


def panel_from(groups: dict[int, list[float]], name="x"):
    rows = [{"country_id": c, name: v} for c, vals in groups.items() for v in vals]
    return pd.DataFrame(rows)


def test_two_country_fixture():
    r = decompose(panel_from({1: [1.0, 3.0], 2: [5.0, 7.0]}), "x")
    assert (r.ss_total, r.ss_between, r.ss_within) == (20.0, 16.0, 4.0)
    assert r.between_fraction == 0.8
    assert r.classification == "static"


def test_constant_within_country():
    r = decompose(panel_from({1: [2.0, 2.0, 2.0], 2: [5.0, 5.0]}), "x")
    assert r.ss_within == 0 and r.between_fraction == 1.0 and r.classification == "static"


def test_same_path_in_every_country():
    r = decompose(panel_from({1: [1.0, 2.0, 6.0], 2: [1.0, 2.0, 6.0]}), "x")
    assert r.ss_between == pytest.approx(0.0, abs=1e-12) and r.classification == "dynamic"


def test_errors():
    with pytest.raises(ValueError, match="no non-missing"):
        decompose(panel_from({1: [np.nan]}), "x")
    with pytest.raises(ValueError, match="zero total"):
        decompose(panel_from({1: [3.0]}), "x")
    with pytest.raises(KeyError):
        decompose(panel_from({1: [3.0]}), "y")


def test_missing_values_excluded():
    a = decompose(panel_from({1: [1.0, 3.0, np.nan], 2: [5.0, 7.0]}), "x")
    assert a.between_fraction == 0.8


def test_threshold_configurable():
    p = panel_from({1: [1.0, 3.0], 2: [5.0, 7.0]})
    assert decompose(p, "x", threshold=0.9).classification == "dynamic"


def brute(groups):
    allv = [v for vals in groups.values() for v in vals]
    g = sum(allv) / len(allv)
    tot = sum((v - g) ** 2 for v in allv)
    btw = sum(len(vals) * (sum(vals) / len(vals) - g) ** 2 for vals in groups.values())
    wth = sum((v - sum(vals) / len(vals)) ** 2 for vals in groups.values() for v in vals)
    return tot, btw, wth


unbalanced = st.dictionaries(st.integers(1, 8), st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=12),
                             min_size=1, max_size=6)


@given(unbalanced)
@settings(max_examples=60, deadline=None)
def test_additivity_and_brute_force(groups):
    tot, btw, wth = brute(groups)
    if tot < 1e-6:
        return
    r = decompose(panel_from(groups), "x")
    assert r.ss_total == pytest.approx(r.ss_between + r.ss_within, rel=1e-6)
    assert r.ss_total == pytest.approx(tot, rel=1e-8, abs=1e-8)
    assert r.ss_between == pytest.approx(btw, rel=1e-6, abs=1e-6)


@given(unbalanced, st.floats(0.1, 50), st.floats(-100, 100), st.booleans())
@settings(max_examples=40, deadline=None)
def test_affine_invariance_and_row_order(groups, a, b, neg):
    p = panel_from(groups)
    if brute(groups)[0] < 1e-3:
        return
    a = -a if neg else a
    r0 = decompose(p, "x")
    r1 = decompose(p.assign(x=a * p.x + b), "x")
    r2 = decompose(p.sample(frac=1.0, random_state=1), "x")
    assert r1.between_fraction == pytest.approx(r0.between_fraction, rel=1e-6, abs=1e-9)
    assert r2.classification == r0.classification
    assert r2.between_fraction == pytest.approx(r0.between_fraction, rel=1e-9, abs=1e-12)


def test_table_sorted_and_skips():
    p = panel_from({1: [1.0, 3.0], 2: [5.0, 7.0]})
    p["y"] = [0.0, 1.0, 0.0, 1.0]
    p["z"] = 4.0
    t = variance_table(p, ["y", "x", "z"])
    assert t["covariate"].tolist() == ["x", "y"]
    assert t["between_fraction"].is_monotonic_decreasing
