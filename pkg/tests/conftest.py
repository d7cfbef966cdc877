"""Shared fixtures."""

import shutil
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from ilcforecast import synthetic
from ilcforecast.panel_store import month_index


def perturb_after(tmp_path: Path, cal_end: int) -> Path:
    """Demo data with test-partition covariates, events and outcomes changed."""
    data = tmp_path / "data"
    shutil.copytree(synthetic.DATA_DIR, data)
    rng = np.random.default_rng(1)

    panel = pd.read_csv(data / "panel.csv")
    late = month_index(panel.year.to_numpy(), panel.month.to_numpy()) > cal_end
    for col in ("polity", "xconst", "gdp_growth"):
        panel.loc[late, col] = rng.normal(0, 5, late.sum()).round(3)
    panel.to_csv(data / "panel.csv", index=False, lineterminator="\n")

    events = pd.read_csv(data / "events.csv")
    ev_late = month_index(events.year.to_numpy(), events.month.to_numpy()) > cal_end
    events.loc[ev_late, "count"] = events.loc[ev_late, "count"] * 3 + 1
    events.to_csv(data / "events.csv", index=False, lineterminator="\n")

    hist = pd.read_csv(data / "history.csv")
    h_late = month_index(hist.year.to_numpy(), hist.month.to_numpy()) > cal_end
    moved = hist[~h_late]
    extra = pd.DataFrame({"country_id": [101, 102, 103], "year": 2013, "month": [2, 7, 11],
                          "irr_exit": 1})
    pd.concat([moved, extra]).sort_values(["country_id", "year", "month"]).to_csv(
        data / "history.csv", index=False, lineterminator="\n")
    return data



@pytest.fixture
def perturbed_demo_data(tmp_path):
    """Copy of the demo data whose rows after the calibration boundary are altered."""
    return perturb_after(tmp_path, month_index(2012, 9))
