import logging

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from ilcforecast.panel_store import PanelError, from_month_index, month_index
from ilcforecast.spells import atrisk_as_of, build_spells, cross_tabulate


def monthly_panel(cid, start, end):
    a, b = month_index(*start), month_index(*end)
    ym = [from_month_index(i) for i in range(a, b + 1)]
    return pd.DataFrame({"country_id": cid, "year": [y for y, _ in ym], "month": [m for _, m in ym]})


def history(rows):
    return pd.DataFrame(rows, columns=["country_id", "year", "month", "irr_exit"])


def value_at(frame, cid, year, month, col="duration"):
    sel = (frame.country_id == cid) & (frame.year == year) & (frame.month == month)
    return int(frame.loc[sel, col].iloc[0])


def test_no_failure_counts_from_backfill():
    panel = monthly_panel(1, (2001, 3), (2001, 6))
    out = build_spells(history([(1, 1955, 1, 0)]), panel, (1955, 1))
    # hand count: Jan 1955 is month 1, so Mar 2001 is month 555
    assert out["duration"].tolist() == [555, 556, 557, 558]
    assert out["t.0"].tolist() == [554, 555, 556, 557]
    # no failure before panel end: right-censored, coded not at risk
    assert out["atrisk"].sum() == 0 and out["cured"].tolist() == [1] * 4
    assert out["end.spell"].tolist() == [0, 0, 0, 1]


def test_thailand_window_count():
    # counting within the observation window that opens in 2001-03
    panel = monthly_panel(764, (2001, 3), (2014, 3))
    out = build_spells(history([(764, 2006, 9, 1)]), panel, (2001, 3))
    assert value_at(out, 764, 2006, 9) == 67
    assert value_at(out, 764, 2006, 9, "failure") == 1
    assert value_at(out, 764, 2006, 10) == 1


def test_thailand_backfilled_to_prior_coup():
    panel = monthly_panel(764, (2001, 3), (2014, 3))
    out = build_spells(history([(764, 1991, 2, 1), (764, 2006, 9, 1)]), panel, (1955, 1))
    assert value_at(out, 764, 2006, 9) == 187


def test_back_to_back_failures():
    panel = pd.concat([monthly_panel(950, (2001, 3), (2014, 3)),
                       monthly_panel(432, (2001, 3), (2014, 3))], ignore_index=True)
    hist = history([(950, 2000, 7, 1), (950, 2006, 12, 1), (950, 2007, 1, 1),
                    (432, 2002, 6, 1), (432, 2012, 3, 1), (432, 2012, 4, 1)])
    out = build_spells(hist, panel, (1955, 1))
    assert value_at(out, 950, 2006, 12) == 77
    assert value_at(out, 950, 2007, 1) == 1
    assert value_at(out, 432, 2012, 3) == 117
    assert value_at(out, 432, 2012, 4) == 1
    assert value_at(out, 432, 2012, 5) == 1


def test_spell_table_and_flags():
    panel = monthly_panel(1, (2001, 1), (2001, 8))
    out, table = build_spells(history([(1, 2001, 3, 1)]), panel, (2000, 1), return_spells=True)
    assert out["atrisk"].tolist() == [1, 1, 1, 0, 0, 0, 0, 0]
    assert out["failure"].tolist() == [0, 0, 1, 0, 0, 0, 0, 0]
    assert table[["ended_in_failure", "right_censored", "state_exit"]].values.tolist() == [
        [1, 0, 0], [0, 1, 0]]
    assert table["start"].tolist() == ["2000-01", "2001-04"]


def test_state_exit_not_censored():
    panel = pd.concat([monthly_panel(1, (2001, 1), (2001, 4)),
                       monthly_panel(2, (2001, 1), (2001, 6))], ignore_index=True)
    _, table = build_spells(history([(1, 2001, 1, 0), (2, 2001, 1, 0)]), panel, (2001, 1),
                            return_spells=True)
    assert table.set_index("country_id")["state_exit"].to_dict() == {1: 1, 2: 0}


def test_history_outside_window_errors():
    panel = monthly_panel(1, (2001, 1), (2001, 6))
    with pytest.raises(PanelError, match="outside"):
        build_spells(history([(1, 1990, 1, 1)]), panel, (1995, 1))
    with pytest.raises(PanelError, match="outside"):
        build_spells(history([(1, 2002, 1, 1)]), panel, (1995, 1))


def test_absent_country_warns(caplog):
    panel = monthly_panel(9, (2001, 1), (2001, 2))
    with caplog.at_level(logging.WARNING):
        out = build_spells(history([(1, 2001, 1, 0)]), panel, (2000, 1))
    assert "absent from history" in caplog.text
    assert out["duration"].tolist() == [13, 14]


@st.composite
def panels(draw):
    n_c = draw(st.integers(1, 3))
    frames, events = [], []
    for c in range(n_c):
        start = draw(st.integers(0, 10))
        length = draw(st.integers(1, 30))
        frames.append(monthly_panel(c, from_month_index(month_index(2001, 1) + start),
                                    from_month_index(month_index(2001, 1) + start + length - 1)))
        fails = draw(st.sets(st.integers(0, 40), max_size=5))
        events += [(c, *from_month_index(month_index(2000, 1) + f), 1) for f in fails]
        events.append((c, 2000, 1, 0))
    panel = pd.concat(frames, ignore_index=True)
    last = max(month_index(y, m) for y, m in zip(panel.year, panel.month))
    events = [e for e in events if month_index(e[1], e[2]) <= last]
    return panel, history(events).drop_duplicates(["country_id", "year", "month"], keep="first")


@given(panels())
@settings(max_examples=60, deadline=None)
def test_spell_invariants(data):
    panel, hist = data
    out = build_spells(hist, panel, (2000, 1))
    t = month_index(out.year.to_numpy(), out.month.to_numpy())
    fails = {(c, month_index(y, m)) for c, y, m, f in hist.itertuples(index=False) if f == 1}
    # failures equal the events inside the panel window
    assert out["failure"].sum() == sum((c, i) in fails for c, i in zip(out.country_id, t))
    assert (out["cured"] == 1 - out["atrisk"]).all()
    assert (out["t.0"] == out["duration"] - 1).all()
    for c, g in out.assign(t=t).groupby("country_id"):
        g = g.sort_values("t")
        d, tt, f = g.duration.to_numpy(), g.t.to_numpy(), g.failure.to_numpy()
        for i in range(1, len(g)):
            gap = tt[i] - tt[i - 1]
            if f[i - 1] == 1:
                assert d[i] == gap  # reset: new spell starts the month after the failure
            else:
                assert d[i] == d[i - 1] + gap
        # atrisk constant within a spell, and 1 exactly when that spell ends in failure
        spell_id = np.concatenate([[0], np.cumsum(f[:-1])])
        for s in np.unique(spell_id):
            a = g.atrisk.to_numpy()[spell_id == s]
            assert len(set(a)) == 1
            ends = [i for (cc, i) in fails if cc == c and i >= tt[spell_id == s][0]]
            assert a[0] == int(bool(ends))
        # one end.spell per spell
        assert g["end.spell"].sum() == len(np.unique(spell_id))


def test_changing_backfill_only_affects_spells_without_failure():
    panel = monthly_panel(1, (2001, 1), (2001, 12))
    hist = history([(1, 2001, 5, 1)])
    a = build_spells(hist, panel, (1955, 1))
    b = build_spells(hist, panel, (1990, 1))
    after = (a.year == 2001) & (a.month > 5)
    assert (a.loc[after, "duration"] == b.loc[after, "duration"]).all()
    assert (a.loc[~after, "duration"] != b.loc[~after, "duration"]).all()


def test_cross_tabulate():
    panel = pd.DataFrame({"a": [0, 0, 1, 1, 1, np.nan], "b": [0, 1, 1, 1, 0, 1]})
    tab = cross_tabulate(panel, "a", "b")
    assert tab.values.tolist() == [[1, 1], [1, 2]]
    const = cross_tabulate(pd.DataFrame({"a": [0] * 5, "b": [1] * 5}), "a", "b")
    assert const.values.tolist() == [[5]]
    with pytest.raises(KeyError):
        cross_tabulate(panel, "a", "zz")


def test_atrisk_as_of_uses_only_given_rows():
    rows = pd.DataFrame({"country_id": [1, 1, 1, 2, 2], "year": 2001, "month": [1, 2, 3, 1, 2],
                         "failure": [0, 1, 0, 0, 0]})
    assert atrisk_as_of(rows).tolist() == [1, 1, 0, 0, 0]
