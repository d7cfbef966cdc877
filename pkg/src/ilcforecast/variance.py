"""Between/within-country sum-of-squares decomposition of covariates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

DEFAULT_THRESHOLD = 0.5


@dataclass(frozen=True)
class VarianceReport:
    covariate: str
    ss_total: float
    ss_between: float
    ss_within: float
    between_fraction: float
    classification: str  # "static" or "dynamic"


def decompose(panel: pd.DataFrame, name: str, threshold: float = DEFAULT_THRESHOLD) -> VarianceReport:
    """Split the total sum of squares of ``name`` into between and within parts.

    The between part is summed over rows, i.e. each observation adds the
    squared deviation of its country mean from the grand mean, so that
    ``ss_total == ss_between + ss_within`` holds for unbalanced panels too.
    A covariate is *static* when ``between_fraction > threshold``.
    """
    if name not in panel.columns:
        raise KeyError(f"unknown covariate {name!r}")
    sub = panel[["country_id", name]].dropna()
    if len(sub) == 0:
        raise ValueError(f"covariate {name!r} has no non-missing values")
    x = sub[name].to_numpy(dtype=float)
    grand = x.mean()
    country_mean = sub.groupby("country_id")[name].transform("mean").to_numpy()
    ss_total = float(np.sum((x - grand) ** 2))
    ss_between = float(np.sum((country_mean - grand) ** 2))
    ss_within = float(np.sum((x - country_mean) ** 2))
    if ss_total == 0:
        raise ValueError(f"covariate {name!r} has zero total variation; classification undefined")
    frac = ss_between / ss_total
    return VarianceReport(name, ss_total, ss_between, ss_within, frac,
                          "static" if frac > threshold else "dynamic")


def variance_table(panel: pd.DataFrame, names, threshold: float = DEFAULT_THRESHOLD) -> pd.DataFrame:
    """Decompose several covariates; sorted by descending between fraction.

    Covariates that cannot be decomposed (all missing, constant) are skipped.
    """
    rows = []
    for name in names:
        try:
            rows.append(decompose(panel, name, threshold).__dict__)
        except ValueError:
            continue
    cols = list(VarianceReport.__dataclass_fields__)
    table = pd.DataFrame(rows, columns=cols)
    return table.sort_values(["between_fraction", "covariate"], ascending=[False, True],
                             kind="mergesort").reset_index(drop=True)
