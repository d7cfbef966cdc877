"""Multi-month forecasts under frozen covariates.

For each country the duration counter is advanced month by month from its
last observed value while covariates stay at their last observed values.
The monthly probability is the conditional hazard (for an ensemble, the
weighted combination of calibrated component hazards), and the window
probability is ``1 - prod(1 - p_t)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from . import spdur
from .ebma import EnsembleFit, predict_ensemble
from .panel_store import from_month_index, month_index

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ForecastEntry:
    country_id: int
    start: tuple[int, int]
    horizon: int
    p_window: float
    monthly: tuple[float, ...]
    name: str = ""


@dataclass
class ForecastSet:
    entries: list[ForecastEntry] = field(default_factory=list)
    excluded: list[int] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return forecast_frame(self.entries)


def window_probability(monthly) -> float:
    """Probability of at least one event over the window, ``1 - prod(1 - p_t)``."""
    p = np.asarray(monthly, dtype=float)
    if ((p < 0) | (p > 1)).any():
        raise ValueError("monthly probabilities must lie in [0, 1]")
    return float(1.0 - np.prod(1.0 - p))


def _monthly_hazards(model: spdur.SpdurFit, rows: pd.DataFrame, base: np.ndarray,
                     horizon: int) -> np.ndarray:
    lam, risk = spdur._linear_parts(model, rows)
    steps = np.arange(1, horizon + 1)
    t = base[:, None] + steps[None, :]
    q = spdur.quantities(lam[:, None], risk[:, None], model.alpha, t)
    return q["cond_hazard"]


def forecast(model, last_rows: pd.DataFrame, horizon: int, components: dict | None = None,
             duration_col: str = "duration", failure_col: str = "failure") -> ForecastSet:
    """Forecast ``horizon`` months past each country's last observed row.

    Parameters
    ----------
    model : SpdurFit or EnsembleFit
        A single fitted model, or an ensemble together with ``components``
        (model name -> SpdurFit).
    last_rows : DataFrame
        Panel rows with duration columns; the latest row per country is used.
        A failure in that month resets the counter, so the first forecast
        month has duration 1.
    horizon : int
        Number of months ``n >= 1``.

    Countries with missing covariates in their last row are excluded and
    listed in ``ForecastSet.excluded``.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if isinstance(model, EnsembleFit):
        if components is None:
            raise ValueError("an ensemble forecast needs the component fits")
        fits = {m: components[m] for m in model.models}
    else:
        fits = {"model": model}
    covs = sorted({c for f in fits.values() for c in f.spec.covariates})

    t_idx = month_index(last_rows["year"].to_numpy(), last_rows["month"].to_numpy())
    last = (last_rows.assign(_t=t_idx)
            .sort_values(["country_id", "_t"], kind="mergesort")
            .groupby("country_id", sort=True).tail(1))
    complete = ~last[covs].isna().any(axis=1) if covs else pd.Series(True, index=last.index)
    excluded = sorted(int(c) for c in last.loc[~complete, "country_id"])
    if excluded:
        logger.warning("countries excluded for missing covariates: %s", excluded)
    last = last.loc[complete]
    if last.empty:
        return ForecastSet([], excluded)

    failed = last[failure_col].to_numpy() == 1
    base = np.where(failed, 0, last[duration_col].to_numpy(dtype=float))
    hazards = {m: _monthly_hazards(f, last, base, horizon) for m, f in fits.items()}
    if isinstance(model, EnsembleFit):
        # calibrate each month's component hazard, then combine
        cols = []
        for m in model.models:
            cal = model.calibrations.get(m)
            h = hazards[m]
            cols.append(cal.apply(h.ravel()).reshape(h.shape) if cal is not None else h)
        stacked = np.stack(cols, axis=-1)
        monthly = predict_ensemble(model, stacked.reshape(-1, len(model.models)))
        monthly = monthly.reshape(len(last), horizon)
    else:
        monthly = hazards["model"]

    names = last["name"].astype(str).to_numpy() if "name" in last.columns else [""] * len(last)
    entries = []
    for i, (cid, t_last) in enumerate(zip(last["country_id"].to_numpy(), last["_t"].to_numpy())):
        p = tuple(float(v) for v in monthly[i])
        entries.append(ForecastEntry(int(cid), from_month_index(int(t_last) + 1), horizon,
                                     window_probability(p), p, str(names[i])))
    return ForecastSet(entries, excluded)


def rank_table(entries, k: int | None = None) -> list[ForecastEntry]:
    """Entries by descending window probability, ties by country id; top ``k``."""
    if not entries:
        raise ValueError("no forecast entries to rank")
    ranked = sorted(entries, key=lambda e: (-e.p_window, e.country_id))
    return ranked if k is None else ranked[:k]


def forecast_frame(entries) -> pd.DataFrame:
    """Machine-readable output: ``country_id, name, p_window, p_1..p_n`` (full precision)."""
    rows = []
    for e in entries:
        row = {"country_id": e.country_id, "name": e.name,
               "start": f"{e.start[0]}-{e.start[1]:02d}", "horizon": e.horizon,
               "p_window": e.p_window}
        row.update({f"p_{i}": p for i, p in enumerate(e.monthly, start=1)})
        rows.append(row)
    return pd.DataFrame(rows)


def format_report(entries, k: int | None = 20) -> str:
    """Plain-text ranking with probabilities rounded to two decimals."""
    ranked = rank_table(entries, k)
    first = ranked[0]
    end = from_month_index(month_index(*first.start) + first.horizon - 1)
    lines = [f"Top {len(ranked)} forecasts for {first.start[0]}-{first.start[1]:02d} "
             f"to {end[0]}-{end[1]:02d}", ""]
    width = max(len(e.name or str(e.country_id)) for e in ranked)
    for rank, e in enumerate(ranked, start=1):
        label = e.name or str(e.country_id)
        lines.append(f"{rank:>3}  {label:<{width}}  {e.p_window:.2f}")
    return "\n".join(lines) + "\n"
