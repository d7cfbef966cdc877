"""Ensemble Bayesian model averaging for binary forecasts.

Each component's raw predictions are recalibrated with a two-parameter
logistic regression on their logit, ``p~ = logistic(a0 + a1 logit(p))``,
and mixture weights are estimated by EM on the Bernoulli mixture
likelihood ``sum_i log sum_k w_k Bern(y_i; p~_ik)``.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import optimize, special

logger = logging.getLogger(__name__)

PRED_EPS = 1e-6


@dataclass(frozen=True)
class ComponentCalibration:
    model: str
    a0: float
    a1: float

    def __post_init__(self):
        if self.a1 < 0:
            raise ValueError("calibration slope must be non-negative")

    def apply(self, predictions) -> np.ndarray:
        p = np.clip(np.asarray(predictions, dtype=float), PRED_EPS, 1 - PRED_EPS)
        return special.expit(self.a0 + self.a1 * special.logit(p))


def _check_outcomes(outcomes) -> np.ndarray:
    y = np.asarray(outcomes, dtype=float)
    if not np.isin(y, (0, 1)).all():
        raise ValueError("outcomes must be 0/1")
    if y.sum() == 0 or y.sum() == len(y):
        raise ValueError("need at least one positive and one negative outcome")
    return y


def calibrate_component(predictions, outcomes, model: str = "", bound: float = 50.0
                        ) -> ComponentCalibration:
    """Logistic recalibration of one component's predictions.

    The slope is constrained to ``[0, bound]`` and the intercept to
    ``[-bound, bound]``; hitting a bound (e.g. under perfect separation)
    emits a warning. Constant predictions carry no ranking information and
    give the intercept-only fit (``a1 = 0``, base-rate intercept).
    """
    y = _check_outcomes(outcomes)
    p = np.clip(np.asarray(predictions, dtype=float), PRED_EPS, 1 - PRED_EPS)
    if len(p) != len(y):
        raise ValueError("predictions and outcomes differ in length")
    x = special.logit(p)
    base = y.mean()
    if np.ptp(x) == 0:
        return ComponentCalibration(model, float(special.logit(base)), 0.0)

    def nll(a):
        eta = a[0] + a[1] * x
        # log(1 + e^eta) - y eta
        val = np.sum(np.logaddexp(0.0, eta) - y * eta)
        resid = special.expit(eta) - y
        return val, np.array([resid.sum(), resid @ x])

    start = np.array([special.logit(base), 1.0])
    res = optimize.minimize(nll, start, jac=True, method="L-BFGS-B",
                            bounds=[(-bound, bound), (0.0, bound)],
                            options={"ftol": 1e-14, "gtol": 1e-10, "maxiter": 1000})
    a0, a1 = (float(v) for v in res.x)
    # under complete separation the likelihood has no finite maximum
    separated = x[y == 0].max() < x[y == 1].min()
    if separated or abs(a0) >= bound - 1e-8 or a1 >= bound - 1e-8:
        warnings.warn(f"calibration for {model or 'component'} is unbounded or hit the "
                      f"coefficient bound {bound} (separation?)", RuntimeWarning, stacklevel=2)
    return ComponentCalibration(model, a0, max(a1, 0.0))


def _mixture_loglik(dens: np.ndarray, w: np.ndarray) -> float:
    return float(np.sum(np.log(dens @ w)))


@dataclass
class EnsembleFit:
    models: list[str]
    weights: np.ndarray
    calibrations: dict[str, ComponentCalibration] = field(default_factory=dict)
    loglik: float = math.nan
    converged: bool = True
    iterations: int = 0
    history: list[float] = field(default_factory=list)
    seed: int | None = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)

    def calibrated(self, raw: pd.DataFrame) -> np.ndarray:
        """Apply each component's calibration; ``raw`` has one column per model."""
        cols = []
        for m in self.models:
            cal = self.calibrations.get(m)
            cols.append(cal.apply(raw[m]) if cal is not None else np.asarray(raw[m], dtype=float))
        return np.column_stack(cols)

    def predict(self, raw: pd.DataFrame) -> np.ndarray:
        """Ensemble probability from raw (uncalibrated) component predictions."""
        return predict_ensemble(self, self.calibrated(raw))

    def weight_table(self) -> pd.DataFrame:
        return pd.DataFrame({"model": self.models, "W": self.weights})

    def to_dict(self) -> dict:
        return {
            "models": list(self.models),
            "weights": self.weights.tolist(),
            "calibrations": {m: {"a0": c.a0, "a1": c.a1} for m, c in self.calibrations.items()},
            "loglik": self.loglik,
            "converged": self.converged,
            "iterations": self.iterations,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnsembleFit":
        cals = {m: ComponentCalibration(m, v["a0"], v["a1"]) for m, v in d["calibrations"].items()}
        return cls(d["models"], d["weights"], cals, d["loglik"], d["converged"],
                   d["iterations"], seed=d.get("seed"))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "EnsembleFit":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _em(dens: np.ndarray, w: np.ndarray, tol: float, max_iter: int):
    history = [_mixture_loglik(dens, w)]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        z = dens * w
        z /= z.sum(axis=1, keepdims=True)
        w = z.mean(axis=0)
        w = w / w.sum()
        history.append(_mixture_loglik(dens, w))
        if abs(history[-1] - history[-2]) < tol:
            converged = True
            break
    return w, history, converged, it


def fit_weights(calibrated, outcomes, models=None, tol: float = 1e-8, max_iter: int = 10000,
                restarts: int = 0, seed: int | None = None) -> EnsembleFit:
    """EM estimate of mixture weights for calibrated component predictions.

    ``calibrated`` is an ``(n, K)`` array or a DataFrame with one column per
    model. Rows with any missing prediction are dropped. EM starts from
    uniform weights; ``restarts`` extra Dirichlet starts drawn with ``seed``
    are tried and the highest likelihood kept. On hitting ``max_iter`` the
    best-so-far weights are returned with ``converged=False``.
    """
    if isinstance(calibrated, pd.DataFrame):
        models = list(calibrated.columns) if models is None else list(models)
        P = calibrated[models].to_numpy(dtype=float)
    else:
        P = np.asarray(calibrated, dtype=float)
        if P.ndim == 1:
            P = P[:, None]
        models = list(models) if models is not None else [f"m{k}" for k in range(P.shape[1])]
    y = np.asarray(outcomes, dtype=float)
    keep = ~np.isnan(P).any(axis=1) & ~np.isnan(y)
    P, y = P[keep], y[keep]
    _check_outcomes(y)
    K = P.shape[1]
    P = np.clip(P, PRED_EPS, 1 - PRED_EPS)
    dens = np.where(y[:, None] == 1, P, 1 - P)

    best = _em(dens, np.full(K, 1.0 / K), tol, max_iter)
    if restarts and K > 1:
        rng = np.random.default_rng(seed)
        for _ in range(restarts):
            cand = _em(dens, rng.dirichlet(np.ones(K)), tol, max_iter)
            if cand[1][-1] > best[1][-1]:
                best = cand
    w, history, converged, it = best
    if not converged:
        logger.warning("EM did not converge in %d iterations", max_iter)
    return EnsembleFit(models, w, {}, history[-1], converged, it, history, seed)


def fit_ensemble(raw: pd.DataFrame, outcomes, bound: float = 50.0, **em_options) -> EnsembleFit:
    """Calibrate every column of ``raw`` and estimate EBMA weights."""
    y = np.asarray(outcomes, dtype=float)
    keep = ~raw.isna().any(axis=1).to_numpy()
    raw, y = raw.loc[keep], y[keep]
    cals = {m: calibrate_component(raw[m].to_numpy(), y, model=m, bound=bound) for m in raw.columns}
    calibrated = pd.DataFrame({m: cals[m].apply(raw[m]) for m in raw.columns}, index=raw.index)
    ens = fit_weights(calibrated, y, **em_options)
    ens.calibrations = cals
    return ens


def predict_ensemble(fit: EnsembleFit, calibrated) -> np.ndarray:
    """Weighted combination ``sum_k w_k p~_k`` of calibrated predictions."""
    if isinstance(calibrated, pd.DataFrame):
        P = calibrated[fit.models].to_numpy(dtype=float)
    else:
        P = np.asarray(calibrated, dtype=float)
        if P.ndim == 1:
            P = P[None, :]
    if np.isnan(P).any():
        raise ValueError("all component predictions must be present")
    return np.clip(P @ fit.weights, 0.0, 1.0)
