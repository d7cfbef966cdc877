import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from ilcforecast import spdur
from ilcforecast.ebma import ComponentCalibration, EnsembleFit
from ilcforecast.forecaster import (
    ForecastEntry, forecast, forecast_frame, format_report, rank_table, window_probability,
)
from ilcforecast.spdur import SpdurFit, SpdurSpec


def exp_model(rate=0.05, gamma0=60.0, risk=(), gamma=()):
    # alpha = 1 makes the at-risk duration process memoryless
    return SpdurFit(SpdurSpec((), risk), [-math.log(rate)], [gamma0, *gamma], 1.0)


def last_rows(cids=(1,), duration=10.0, failure=0, **cols):
    return pd.DataFrame({"country_id": list(cids), "year": 2014, "month": 3,
                         "duration": duration, "failure": failure, **cols})


def test_window_probability_values():
    assert window_probability([0.05] * 6) == pytest.approx(1 - 0.95 ** 6, abs=1e-12)
    assert window_probability([0.05] * 6) == pytest.approx(0.2649, abs=5e-5)
    assert window_probability([0.3]) == pytest.approx(0.3, abs=1e-15)
    with pytest.raises(ValueError):
        window_probability([1.2])


@given(st.lists(st.floats(0, 1), min_size=1, max_size=12), st.randoms(use_true_random=False))
@settings(max_examples=60, deadline=None)
def test_window_probability_order_free_and_monotone(ps, rnd):
    shuffled = ps[:]
    rnd.shuffle(shuffled)
    assert window_probability(shuffled) == pytest.approx(window_probability(ps), abs=1e-12)
    assert window_probability(ps + [rnd.random()]) >= window_probability(ps) - 1e-15


def test_immune_country_never_fails():
    out = forecast(exp_model(gamma0=-800.0), last_rows(), 12)
    assert out.entries[0].p_window == 0.0


def test_single_month_equals_conditional_hazard():
    m = SpdurFit(SpdurSpec(), [3.0], [0.2], 0.7)
    out = forecast(m, last_rows(duration=10.0), 1)
    expected = spdur.predict(m, pd.DataFrame({"duration": [11.0]}))["cond_hazard"][0]
    assert out.entries[0].p_window == pytest.approx(expected, abs=1e-15)
    assert out.entries[0].start == (2014, 4)


def test_constant_hazard_matches_closed_form():
    out = forecast(exp_model(0.05), last_rows(), 6)
    e = out.entries[0]
    h = 1 - math.exp(-0.05)
    np.testing.assert_allclose(e.monthly, h, rtol=1e-12)
    assert e.p_window == pytest.approx(1 - (1 - h) ** 6, abs=1e-12)
    assert e.p_window == pytest.approx(window_probability(e.monthly), abs=1e-12)


def test_duration_advances_and_failure_resets():
    m = SpdurFit(SpdurSpec(), [2.0], [1.0], 0.6)
    rows = pd.concat([last_rows([1], duration=40.0, failure=0),
                      last_rows([2], duration=40.0, failure=1)], ignore_index=True)
    out = {e.country_id: e for e in forecast(m, rows, 3).entries}
    t1 = spdur.predict(m, pd.DataFrame({"duration": [41.0, 42.0, 43.0]}))["cond_hazard"]
    t2 = spdur.predict(m, pd.DataFrame({"duration": [1.0, 2.0, 3.0]}))["cond_hazard"]
    np.testing.assert_allclose(out[1].monthly, t1, rtol=1e-12)
    np.testing.assert_allclose(out[2].monthly, t2, rtol=1e-12)


def test_uses_latest_row_and_frozen_covariates():
    m = SpdurFit(SpdurSpec((), ("z",)), [3.0], [0.0, 2.0], 0.8)
    rows = pd.DataFrame({"country_id": [1, 1], "year": [2014, 2014], "month": [3, 2],
                         "duration": [5.0, 4.0], "failure": [0, 0], "z": [1.0, -3.0]})
    e = forecast(m, rows, 4).entries[0]
    frozen = pd.DataFrame({"duration": [6.0, 7.0, 8.0, 9.0], "z": 1.0})
    np.testing.assert_allclose(e.monthly, spdur.predict(m, frozen)["cond_hazard"], rtol=1e-12)


def test_missing_covariates_excluded():
    m = exp_model(risk=("z",), gamma=(1.0,))
    rows = last_rows([1, 2, 3], z=[0.5, np.nan, 0.1])
    out = forecast(m, rows, 6)
    assert [e.country_id for e in out.entries] == [1, 3]
    assert out.excluded == [2]


def test_ensemble_forecast_is_weighted_combination():
    a = SpdurFit(SpdurSpec(), [3.0], [0.5], 0.7)
    b = SpdurFit(SpdurSpec(), [4.0], [-1.0], 1.3)
    cal = {"A": ComponentCalibration("A", 0.2, 0.9), "B": ComponentCalibration("B", -0.1, 1.1)}
    ens = EnsembleFit(["A", "B"], [0.3, 0.7], cal)
    rows = last_rows([1, 2], duration=[5.0, 20.0])
    out = forecast(ens, rows, 6, components={"A": a, "B": b})
    single_a = forecast(a, rows, 6).entries
    single_b = forecast(b, rows, 6).entries
    for e, ea, eb in zip(out.entries, single_a, single_b):
        expected = (0.3 * cal["A"].apply(ea.monthly) + 0.7 * cal["B"].apply(eb.monthly))
        np.testing.assert_allclose(e.monthly, expected, rtol=1e-12)
        lo = np.minimum(cal["A"].apply(ea.monthly), cal["B"].apply(eb.monthly))
        hi = np.maximum(cal["A"].apply(ea.monthly), cal["B"].apply(eb.monthly))
        assert (lo - 1e-15 <= np.array(e.monthly)).all() and (np.array(e.monthly) <= hi + 1e-15).all()
    with pytest.raises(ValueError):
        forecast(ens, rows, 6)


def test_horizon_validation():
    with pytest.raises(ValueError):
        forecast(exp_model(), last_rows(), 0)


def entry(cid, p, name=""):
    return ForecastEntry(cid, (2014, 4), 6, p, (p,), name)


def test_rank_table_oracle_and_ties():
    entries = [entry(5, 0.1), entry(3, 0.4), entry(9, 0.1), entry(1, 0.05), entry(2, 0.4)]
    got = [e.country_id for e in rank_table(entries)]
    assert got == [c for c, _ in sorted(((e.country_id, e.p_window) for e in entries),
                                        key=lambda t: (-t[1], t[0]))]
    assert got == [2, 3, 5, 9, 1]
    assert [e.country_id for e in rank_table([entry(c, 0.2) for c in (7, 3, 5)])] == [3, 5, 7]
    assert len(rank_table(entries, 2)) == 2
    with pytest.raises(ValueError):
        rank_table([])


def test_report_format():
    entries = [entry(369, 0.2812, "Ukraine"), entry(1, 0.1, "Avalon")]
    text = format_report(entries, k=20)
    lines = text.splitlines()
    assert lines[0] == "Top 2 forecasts for 2014-04 to 2014-09"
    assert lines[2].split() == ["1", "Ukraine", "0.28"]
    frame = forecast_frame(entries)
    assert frame["p_window"][0] == 0.2812     # full precision kept in machine output
    assert list(frame.columns) == ["country_id", "name", "start", "horizon", "p_window", "p_1"]
