"""Duration variables for split-population models.

Time-to-failure counters are seeded from a leader-change history that
reaches back before the panel (``backfill_start``, 1955-01 by default)
to mitigate left-censoring. A failure month closes its spell; the next
spell starts the following calendar month with duration 1.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .panel_store import ID_COLUMNS, PanelError, from_month_index, month_index, parse_year_month

logger = logging.getLogger(__name__)

DURATION_COLUMNS = ("duration", "failure", "atrisk", "cured", "t.0", "end.spell")
DEFAULT_BACKFILL = (1955, 1)


@dataclass(frozen=True)
class Spell:
    country_id: int
    start: tuple[int, int]
    end: tuple[int, int]
    ended_in_failure: int
    right_censored: int

    @property
    def state_exit(self) -> int:
        return int(not self.ended_in_failure and not self.right_censored)


def read_history(path, flag: str = "irr_exit") -> pd.DataFrame:
    """Read a leader-history CSV with ``country_id, year, month`` and a 0/1 flag."""
    hist = pd.read_csv(path)
    missing = [c for c in ("country_id", "year", "month", flag) if c not in hist.columns]
    if missing:
        raise PanelError(f"history file is missing columns: {missing}")
    bad = ~hist[flag].isin([0, 1])
    if bad.any():
        raise PanelError(f"history row {int(np.flatnonzero(bad)[0]) + 1}: flag must be 0 or 1")
    return hist


def build_spells(history: pd.DataFrame, panel: pd.DataFrame, backfill_start=DEFAULT_BACKFILL,
                 flag: str = "irr_exit", return_spells: bool = False):
    """Append duration-model columns to ``panel``.

    Parameters
    ----------
    history : DataFrame
        Leader-change events with ``country_id, year, month`` and ``flag``
        (1 marks a failure month). Rows with flag 0 are allowed and only
        record that a country is known to the history.
    panel : DataFrame
        Country-month panel, e.g. from :func:`ingest_panel`.
    backfill_start : (year, month) or "YYYY-MM"
        Month at which counters start for countries without an earlier
        failure; that month has duration 1.
    return_spells : bool
        Also return a frame of :class:`Spell` records.

    Returns
    -------
    DataFrame with ``duration, failure, atrisk, cured, t.0, end.spell``
    appended (and optionally the spell table).
    """
    b_year, b_month = parse_year_month(backfill_start)
    start_idx = month_index(b_year, b_month)
    panel = panel.sort_values(list(ID_COLUMNS), kind="mergesort").reset_index(drop=True)
    pidx = month_index(panel["year"].to_numpy(), panel["month"].to_numpy())
    panel_end = int(pidx.max())
    if (pidx < start_idx).any():
        raise PanelError("panel starts before backfill_start")

    hidx = month_index(history["year"].to_numpy(), history["month"].to_numpy())
    outside = (hidx < start_idx) | (hidx > panel_end)
    if outside.any():
        row = history.iloc[int(np.flatnonzero(outside)[0])]
        raise PanelError(
            f"history event outside [{b_year}-{b_month:02d}, panel end]: "
            f"country {row.country_id} {int(row.year)}-{int(row.month):02d}"
        )
    failures: dict[int, np.ndarray] = {}
    fail_mask = history[flag].to_numpy() == 1
    for cid in pd.unique(history["country_id"]):
        sel = (history["country_id"].to_numpy() == cid) & fail_mask
        failures[int(cid)] = np.unique(hidx[sel])
    known = set(int(c) for c in history["country_id"])

    n = len(panel)
    cols = {c: np.zeros(n, dtype=np.int64) for c in DURATION_COLUMNS}
    spells = []
    cids = panel["country_id"].to_numpy()
    for cid in pd.unique(cids):
        rows = np.flatnonzero(cids == cid)
        months = pidx[rows]
        if int(cid) not in known:
            logger.warning("country %s absent from history; counter seeded at backfill start", cid)
        events = failures.get(int(cid), np.array([], dtype=np.int64))
        # number of failures strictly before each month -> spell number
        before = np.searchsorted(events, months, side="left")
        prev = events[np.maximum(before - 1, 0)] + 1 if len(events) else np.zeros_like(months)
        spell_start = np.where(before > 0, prev, start_idx)
        is_fail = np.isin(months, events)
        cols["duration"][rows] = months - spell_start + 1
        cols["failure"][rows] = is_fail
        present = set(months.tolist())
        for f in events:
            if f >= months.min() and f <= months.max() and f not in present:
                logger.warning("failure month %s for country %s has no panel row",
                               from_month_index(f), cid)
        for k in np.unique(before):
            in_spell = rows[before == k]
            last = in_spell[-1]
            ends_in_failure = k < len(events)
            right_censored = (not ends_in_failure) and pidx[last] == panel_end
            cols["atrisk"][in_spell] = int(ends_in_failure)
            cols["end.spell"][last] = 1
            spells.append(Spell(
                int(cid),
                from_month_index(int(spell_start[before == k][0])),
                from_month_index(int(events[k]) if ends_in_failure else int(pidx[last])),
                int(ends_in_failure),
                int(right_censored),
            ))
    cols["cured"] = 1 - cols["atrisk"]
    cols["t.0"] = cols["duration"] - 1
    out = panel.drop(columns=[c for c in DURATION_COLUMNS if c in panel.columns])
    for c in DURATION_COLUMNS:
        out[c] = cols[c]
    if return_spells:
        table = pd.DataFrame([{
            "country_id": s.country_id,
            "start": f"{s.start[0]}-{s.start[1]:02d}",
            "end": f"{s.end[0]}-{s.end[1]:02d}",
            "ended_in_failure": s.ended_in_failure,
            "right_censored": s.right_censored,
            "state_exit": s.state_exit,
        } for s in spells])
        return out, table
    return out


def cross_tabulate(panel: pd.DataFrame, row_var: str, col_var: str) -> pd.DataFrame:
    """Counts of each (row, col) value combination over rows where both are present."""
    for v in (row_var, col_var):
        if v not in panel.columns:
            raise KeyError(f"unknown variable {v!r}")
    sub = panel[[row_var, col_var]].dropna()
    return pd.crosstab(sub[row_var], sub[col_var])


def atrisk_as_of(rows: pd.DataFrame, failure_col: str = "failure") -> np.ndarray:
    """At-risk coding using only the failures present in ``rows``.

    A row is at risk iff its country has a failure in the same or a later
    month among ``rows``. On a window ending at a cut-off date this is the
    retroactive coding that was knowable at the cut-off.
    """
    t = month_index(rows["year"].to_numpy(), rows["month"].to_numpy())
    frame = pd.DataFrame({"c": rows["country_id"].to_numpy(), "t": t,
                          "f": rows[failure_col].to_numpy(dtype=float)})
    order = np.lexsort((-frame["t"].to_numpy(), frame["c"].to_numpy()))
    rev = frame.iloc[order]
    later = rev.groupby("c", sort=False)["f"].cummax().to_numpy()
    out = np.empty(len(rows), dtype=np.int64)
    out[order] = (later > 0).astype(np.int64)
    return out
