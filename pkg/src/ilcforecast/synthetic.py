"""Synthetic data: split-population Weibull spells and a small demo panel.

``simulate_spells`` draws one row per spell from the model's own
generative process and is the oracle for parameter-recovery checks.
``demo_dataset`` builds the bundled 6-country, 60-month example (panel,
leader history, events, centroids); run this module to regenerate the
files under ``ilcforecast/data``.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd
from scipy import special

from .panel_store import from_month_index, month_index

DATA_DIR = Path(__file__).with_name("data")


def simulate_spells(n: int, beta, gamma, alpha: float, rng: np.random.Generator,
                    censor_time: float | None = None) -> pd.DataFrame:
    """Simulate ``n`` spells from the split-population Weibull model.

    Covariates ``x1..`` (duration) and ``z1..`` (risk) are standard normal,
    one per non-intercept coefficient. A spell is at risk with probability
    ``logistic(z'gamma)``; at-risk spells draw ``T`` with scale
    ``lambda = exp(-x'beta)`` and shape ``alpha``; every spell is censored
    at ``censor_time`` (default: 4 times the median baseline scale).
    Immune spells are observed until censoring.
    """
    beta = np.asarray(beta, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    X = np.column_stack([np.ones(n), rng.standard_normal((n, len(beta) - 1))])
    Z = np.column_stack([np.ones(n), rng.standard_normal((n, len(gamma) - 1))])
    lam = np.exp(-(X @ beta))
    at_risk = rng.random(n) < special.expit(Z @ gamma)
    # inverse-CDF draw: S(T) = U
    T = (-np.log(rng.random(n))) ** (1.0 / alpha) / lam
    if censor_time is None:
        censor_time = 4.0 * float(np.exp(beta[0]))
    C = rng.uniform(0.5, 1.0, n) * censor_time
    failed = at_risk & (T <= C)
    out = pd.DataFrame({"duration": np.where(failed, T, C), "failure": failed.astype(int),
                        "atrisk": at_risk.astype(int)})
    for j in range(1, X.shape[1]):
        out[f"x{j}"] = X[:, j]
    for j in range(1, Z.shape[1]):
        out[f"z{j}"] = Z[:, j]
    return out


DEMO_COUNTRIES = pd.DataFrame({
    "country_id": [101, 102, 103, 104, 105, 106],
    "name": ["Avalon", "Borduria", "Carpania", "Dravonia", "Elbonia", "Freedonia"],
    "lat": [12.0, 14.5, 9.0, 18.0, 6.5, 15.5],
    "lon": [2.0, 5.5, 7.0, 1.0, 4.0, 10.0],
    # static traits: democracy score and executive constraints
    "polity": [-6.0, 5.0, -2.0, 8.0, -7.0, 1.0],
    "xconst": [2.0, 5.0, 3.0, 7.0, 1.0, 4.0],
    "risk_shift": [0.9, -0.8, 0.4, -2.0, 1.0, -0.2],
})
DEMO_START = (2009, 4)
DEMO_MONTHS = 60
DEMO_BACKFILL = (2000, 1)
DEMO_PARTITIONS = {"train_end": "2011-06", "calibration_end": "2012-09", "test_end": "2014-03"}


def _partition_of(idx: int) -> str:
    for name, key in (("train", "train_end"), ("calibration", "calibration_end"),
                      ("test", "test_end")):
        y, m = (int(v) for v in DEMO_PARTITIONS[key].split("-"))
        if idx <= month_index(y, m):
            return name
    return "beyond"


def _draw(seed: int):
    rng = np.random.default_rng(seed)
    c = DEMO_COUNTRIES
    start = month_index(*DEMO_START)
    months = np.arange(start, start + DEMO_MONTHS)
    n_c = len(c)

    # latent protest intensity: AR(1) on the log scale per country
    level = np.zeros((n_c, DEMO_MONTHS))
    level[:, 0] = rng.normal(1.5, 0.5, n_c)
    for t in range(1, DEMO_MONTHS):
        level[:, t] = 0.6 + 0.6 * level[:, t - 1] + rng.normal(0, 0.45, n_c)
    protests = rng.poisson(np.exp(level))
    growth = rng.normal(2.5, 2.0, (n_c, DEMO_MONTHS))

    # monthly failure probability rises with last month's protests
    lp = np.log10(np.concatenate([protests[:, :1], protests[:, :-1]], axis=1) + 1)
    eta = -5.2 + c["risk_shift"].to_numpy()[:, None] + 1.6 * lp - 0.08 * growth
    fail = rng.random((n_c, DEMO_MONTHS)) < special.expit(eta)
    return rng, months, protests, growth, fail


def _acceptable(months, fail) -> bool:
    parts = np.array([_partition_of(int(m)) for m in months])
    counts = {p: int(fail[:, parts == p].sum()) for p in ("train", "calibration", "test")}
    return counts["train"] >= 4 and counts["calibration"] >= 2 and counts["test"] >= 2


def demo_dataset(seed: int = 20140401) -> dict[str, pd.DataFrame]:
    """Build the demo data; deterministic in ``seed``.

    Seeds are tried in sequence from ``seed`` until every partition holds
    some failures, so the result is still a pure function of ``seed``.
    """
    s = seed
    while True:
        rng, months, protests, growth, fail = _draw(s)
        if _acceptable(months, fail):
            break
        s += 1
    c = DEMO_COUNTRIES
    n_c = len(c)

    panel_rows = []
    for i in range(n_c):
        for j, m in enumerate(months):
            y, mo = from_month_index(int(m))
            exit_ = int(fail[i, j])
            # a few entries without an exit (e.g. a rebel takeover after a regular exit)
            entry = exit_ if exit_ else int(rng.random() < 0.004)
            panel_rows.append({
                "country_id": int(c.country_id[i]), "year": y, "month": mo,
                "name": c.name[i], "irr_entry": entry, "irr_exit": exit_,
                "ilc": int(entry or exit_),
                "polity": c.polity[i], "xconst": c.xconst[i],
                "gdp_growth": round(float(growth[i, j]), 3),
            })
    panel = pd.DataFrame(panel_rows)
    # a missing covariate value, as in real panels
    panel.loc[(panel.country_id == 105) & (panel.year == 2010) & (panel.month == 2),
              "gdp_growth"] = np.nan

    history_rows = []
    start = month_index(*DEMO_START)
    for i in range(n_c):
        cid = int(c.country_id[i])
        history_rows.append({"country_id": cid, "year": DEMO_BACKFILL[0],
                             "month": DEMO_BACKFILL[1], "irr_exit": 0})
        # pre-panel failures seed the duration counters
        if c.risk_shift[i] > 0:
            pre = int(rng.integers(month_index(*DEMO_BACKFILL) + 1, start))
            y, mo = from_month_index(pre)
            history_rows.append({"country_id": cid, "year": y, "month": mo, "irr_exit": 1})
        for j in np.flatnonzero(fail[i]):
            y, mo = from_month_index(int(months[j]))
            history_rows.append({"country_id": cid, "year": y, "month": mo, "irr_exit": 1})
    history = (pd.DataFrame(history_rows)
               .sort_values(["country_id", "year", "month"], kind="mergesort")
               .reset_index(drop=True))

    sectors = [("DIS", "GOV", 14), ("DIS", "GOV", 2), ("GOV", "DIS", 17), ("GOV", "GOV", 4),
               ("REB", "GOV", 19), ("ETH", "GOV", 11), ("other", "GOV", 1)]
    event_rows = []
    for i in range(n_c):
        for j, m in enumerate(months):
            y, mo = from_month_index(int(m))
            for src, tgt, root in sectors:
                n = int(protests[i, j]) if root == 14 else int(rng.poisson(2.0))
                if n > 0:
                    event_rows.append({"country_id": int(c.country_id[i]), "year": y, "month": mo,
                                       "source_sector": src, "target_sector": tgt,
                                       "cameo_root": root, "count": n})
    events = pd.DataFrame(event_rows)
    centroids = c[["country_id", "name", "lat", "lon"]].copy()
    return {"panel": panel, "history": history, "events": events, "centroids": centroids}


def write_demo_dataset(directory, seed: int = 20140401) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, frame in demo_dataset(seed).items():
        paths[name] = directory / f"{name}.csv"
        frame.to_csv(paths[name], index=False, lineterminator="\n")
    return paths


def demo_config_path() -> Path:
    """The bundled pipeline configuration for the demo dataset."""
    return DATA_DIR / "demo.yaml"


if __name__ == "__main__":
    write_demo_dataset(DATA_DIR)
