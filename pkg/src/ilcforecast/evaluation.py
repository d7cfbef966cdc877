"""Fit statistics for sparse binary forecasts.

Confusion counts, precision/recall/F-score, F-maximising cut points,
ROC curves with rank-statistic AUC, separation-plot data, annualisation
of monthly predictions, and precision revised for near misses within a
window of months around an observed event. Metrics whose denominator is
zero are reported as ``nan`` (undefined), never as 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import stats

from .panel_store import month_index


@dataclass(frozen=True)
class ConfusionCounts:
    tn: int
    fp: int
    fn: int
    tp: int

    @property
    def total(self) -> int:
        return self.tn + self.fp + self.fn + self.tp


def _arrays(predictions, outcomes):
    p = np.asarray(predictions, dtype=float)
    y = np.asarray(outcomes, dtype=float)
    if p.shape != y.shape:
        raise ValueError("predictions and outcomes differ in shape")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("outcomes must be 0/1")
    return p, y.astype(int)


def confusion(predictions, outcomes, tau: float) -> ConfusionCounts:
    """Counts with a case predicted positive iff ``p > tau``."""
    p, y = _arrays(predictions, outcomes)
    if ((p < 0) | (p > 1)).any():
        raise ValueError("predictions must lie in [0, 1]")
    pos = p > tau
    return ConfusionCounts(
        tn=int(np.sum(~pos & (y == 0))), fp=int(np.sum(pos & (y == 0))),
        fn=int(np.sum(~pos & (y == 1))), tp=int(np.sum(pos & (y == 1))),
    )


def _ratio(num, den):
    return num / den if den else math.nan


def f_score(precision: float, recall: float, beta_f: float = 1.0) -> float:
    b2 = beta_f ** 2
    if math.isnan(precision) or math.isnan(recall):
        return math.nan
    den = precision * b2 + recall
    return (1 + b2) * precision * recall / den if den else math.nan


def metrics(c: ConfusionCounts, beta_f: float = 1.0) -> dict[str, float]:
    precision = _ratio(c.tp, c.tp + c.fp)
    recall = _ratio(c.tp, c.tp + c.fn)
    return {
        "accuracy": _ratio(c.tp + c.tn, c.total),
        "recall": recall,
        "precision": precision,
        "specificity": _ratio(c.tn, c.tn + c.fp),
        "fpr": _ratio(c.fp, c.tn + c.fp),
        "f_score": f_score(precision, recall, beta_f),
    }


def _scan(p, y, beta_f):
    """F-score for every observed value used as the cut point (ascending)."""
    cands = np.unique(p)
    order = np.sort(p)
    pos_sorted = np.sort(p[y == 1])
    # predicted positive: p > tau
    n_pred = len(p) - np.searchsorted(order, cands, side="right")
    tp = len(pos_sorted) - np.searchsorted(pos_sorted, cands, side="right")
    fp = n_pred - tp
    b2 = beta_f ** 2
    P = len(pos_sorted)
    with np.errstate(invalid="ignore", divide="ignore"):
        prec = np.where(tp + fp > 0, tp / np.maximum(tp + fp, 1), np.nan)
        rec = tp / P
        den = prec * b2 + rec
        f = np.where(den > 0, (1 + b2) * prec * rec / np.where(den > 0, den, 1), 0.0)
    f = np.nan_to_num(f, nan=0.0)
    return cands, f


def optimal_tau(predictions, outcomes, beta_f: float = 1.0) -> float:
    """Cut point among the observed prediction values maximising the F-score.

    Undefined F-scores count as 0 in the scan; ties go to the smallest value.
    """
    p, y = _arrays(predictions, outcomes)
    if y.sum() == 0:
        raise ValueError("optimal_tau needs at least one positive outcome")
    cands, f = _scan(p, y, beta_f)
    return float(cands[int(np.argmax(f))])


def roc_curve(predictions, outcomes) -> pd.DataFrame:
    """ROC points from a threshold sweep.

    Row ``k`` classifies ``p >= threshold`` as positive; the first row has
    an infinite threshold (the (0, 0) corner) and the last row reaches
    (1, 1).
    """
    p, y = _arrays(predictions, outcomes)
    P, N = y.sum(), len(y) - y.sum()
    if P == 0 or N == 0:
        raise ValueError("ROC needs at least one positive and one negative")
    thr = np.unique(p)[::-1]
    order = np.sort(p)
    pos_sorted = np.sort(p[y == 1])
    n_ge = len(p) - np.searchsorted(order, thr, side="left")
    tp = len(pos_sorted) - np.searchsorted(pos_sorted, thr, side="left")
    fp = n_ge - tp
    return pd.DataFrame({
        "fpr": np.concatenate([[0.0], fp / N]),
        "tpr": np.concatenate([[0.0], tp / P]),
        "threshold": np.concatenate([[np.inf], thr]),
    })


def auc_rank(predictions, outcomes) -> float:
    """Mann-Whitney AUC with mid-ranks (ties get half credit)."""
    p, y = _arrays(predictions, outcomes)
    P, N = int(y.sum()), int(len(y) - y.sum())
    if P == 0 or N == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    ranks = stats.rankdata(p)
    return float((ranks[y == 1].sum() - P * (P + 1) / 2) / (P * N))


def auc_trapezoid(curve: pd.DataFrame) -> float:
    x, yv = curve["fpr"].to_numpy(), curve["tpr"].to_numpy()
    return float(np.sum(np.diff(x) * (yv[1:] + yv[:-1]) / 2))


def roc_auc(predictions, outcomes):
    """``(curve, auc)`` with the AUC from the rank statistic."""
    return roc_curve(predictions, outcomes), auc_rank(predictions, outcomes)


def separation_plot_data(predictions, outcomes) -> pd.DataFrame:
    p = np.asarray(predictions, dtype=float)
    y = np.asarray(outcomes)
    order = np.argsort(p, kind="stable")
    return pd.DataFrame({"rank": np.arange(1, len(p) + 1), "outcome": y[order],
                         "prediction": p[order], "row": order})


def brier(predictions, outcomes) -> float:
    p, y = _arrays(predictions, outcomes)
    return float(np.mean((p - y) ** 2))


def annualize(frame: pd.DataFrame, prediction="p", outcome="y") -> pd.DataFrame:
    """Country-year predictions ``1 - prod(1 - p_m)`` and outcomes ``max(y_m)``."""
    with np.errstate(divide="ignore"):
        g = frame.assign(_q=np.log1p(-frame[prediction].to_numpy(dtype=float)))
    out = g.groupby(["country_id", "year"], sort=True).agg(
        _q=("_q", "sum"), **{outcome: (outcome, "max")}, months=(outcome, "size"))
    out[prediction] = -np.expm1(out.pop("_q"))
    return out.reset_index()[["country_id", "year", prediction, outcome, "months"]]


def revised_precision(tp: int, fp: int, window_true_fp: int) -> float:
    """Precision counting false positives near an observed event as hits."""
    return _ratio(tp + window_true_fp, tp + fp)


def window_true_false_positives(frame: pd.DataFrame, tau: float, window: int = 6,
                                prediction="p", outcome="y") -> np.ndarray:
    """Mask of false positives with an observed event in the same country within
    ``window`` calendar months either side."""
    p = frame[prediction].to_numpy(dtype=float)
    y = frame[outcome].to_numpy(dtype=int)
    fp = (p > tau) & (y == 0)
    t = month_index(frame["year"].to_numpy(), frame["month"].to_numpy())
    cid = frame["country_id"].to_numpy()
    hit = np.zeros(len(p), dtype=bool)
    events: dict = {}
    for c, m in zip(cid[y == 1], t[y == 1]):
        events.setdefault(c, []).append(m)
    for i in np.flatnonzero(fp):
        ev = events.get(cid[i])
        if ev is not None and np.min(np.abs(np.asarray(ev) - t[i])) <= window:
            hit[i] = True
    return hit


def fuzzy_precision(frame: pd.DataFrame, tau: float, window: int = 6,
                    prediction="p", outcome="y") -> float:
    """Revised precision ``(tp + window-true fp) / (tp + fp)``.

    ``frame`` needs ``country_id, year, month`` plus the prediction and
    outcome columns.
    """
    c = confusion(frame[prediction], frame[outcome], tau)
    near = int(window_true_false_positives(frame, tau, window, prediction, outcome).sum())
    return revised_precision(c.tp, c.fp, near)


def score(predictions, outcomes, beta_f: float = 1.0, tau: float | None = None) -> dict:
    """AUC, F-optimal cut point and the metrics at that cut point."""
    p, y = _arrays(predictions, outcomes)
    if tau is None:
        tau = optimal_tau(p, y, beta_f) if y.sum() else math.nan
    row = {"n": len(p), "events": int(y.sum())}
    try:
        row["auc"] = auc_rank(p, y)
    except ValueError:
        row["auc"] = math.nan
    row["tau"] = tau
    if math.isnan(tau):
        row.update({k: math.nan for k in ("accuracy", "recall", "precision", "f_score")})
    else:
        m = metrics(confusion(p, y, tau), beta_f)
        row.update({k: m[k] for k in ("accuracy", "recall", "precision", "f_score")})
    row["brier"] = brier(p, y) if len(p) else math.nan
    return row


def fit_report(scored: pd.DataFrame, models, weights=None, beta_f: float = 1.0,
               partitions=("train", "calibration", "test")) -> pd.DataFrame:
    """Table of W, AUC, tau, accuracy, recall, precision, Brier per model and partition.

    ``scored`` holds ``country_id, year, month, partition, y`` and one
    prediction column per model. The report has a ``monthly`` block and an
    ``annualized`` block (predictions aggregated with ``1 - prod(1 - p)``).
    """
    weights = weights or {}
    rows = []
    for block in ("monthly", "annualized"):
        for part in partitions:
            sub = scored[scored["partition"] == part]
            if sub.empty:
                continue
            for model in models:
                frame = sub[["country_id", "year", "month", "y", model]].dropna()
                if block == "annualized":
                    frame = annualize(frame, prediction=model, outcome="y")
                r = score(frame[model], frame["y"], beta_f)
                rows.append({"block": block, "partition": part, "model": model,
                             "W": weights.get(model, math.nan), **r})
    return pd.DataFrame(rows)
