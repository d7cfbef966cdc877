"""Split-population (cure) Weibull duration regression.

Two equations are estimated jointly: a logit *risk* equation giving the
probability ``r = logistic(z'gamma)`` that an observation belongs to the
at-risk population, and an accelerated-failure-time Weibull *duration*
equation with ``lambda = exp(-x'beta)`` and shape ``alpha``:

    S(t) = exp(-(lambda t)^alpha)
    f(t) = alpha lambda^alpha t^(alpha-1) S(t)

Each row contributes ``log(r f(t))`` if it is a failure and
``log((1 - r) + r S(t))`` otherwise. Positive ``beta`` prolong survival,
positive ``gamma`` raise the at-risk probability.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import optimize, special, stats

logger = logging.getLogger(__name__)

PROB_EPS = 1e-12
DUR_INTERCEPT = "(Dur. Intercept)"
RISK_INTERCEPT = "(Risk Intercept)"


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class SpdurSpec:
    """Covariate names for the duration and risk equations (intercepts implicit)."""

    duration: tuple[str, ...] = ()
    risk: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "duration", tuple(self.duration))
        object.__setattr__(self, "risk", tuple(self.risk))

    @property
    def duration_terms(self) -> list[str]:
        return [DUR_INTERCEPT, *self.duration]

    @property
    def risk_terms(self) -> list[str]:
        return [RISK_INTERCEPT, *self.risk]

    @property
    def n_params(self) -> int:
        return len(self.duration) + len(self.risk) + 3

    @property
    def covariates(self) -> list[str]:
        return list(dict.fromkeys([*self.duration, *self.risk]))

    def split(self, theta):
        theta = np.asarray(theta, dtype=float)
        p = len(self.duration) + 1
        q = len(self.risk) + 1
        return theta[:p], theta[p:p + q], theta[p + q]


def design(spec: SpdurSpec, rows: pd.DataFrame, duration_col="duration",
           failure_col="failure", dropna=True):
    """Design matrices ``X, Z`` plus ``t, delta`` and the index of rows used.

    Rows with a missing value in any active column are dropped (listwise).
    """
    needed = [duration_col, failure_col, *spec.covariates]
    missing = [c for c in needed if c not in rows.columns]
    if missing:
        raise KeyError(f"rows are missing columns {missing}")
    sub = rows[needed]
    if dropna:
        sub = sub.dropna()
    elif sub.isna().any().any():
        raise ModelError("missing covariate values")
    n = len(sub)
    X = np.column_stack([np.ones(n), *(sub[c].to_numpy(dtype=float) for c in spec.duration)])
    Z = np.column_stack([np.ones(n), *(sub[c].to_numpy(dtype=float) for c in spec.risk)])
    t = sub[duration_col].to_numpy(dtype=float)
    delta = sub[failure_col].to_numpy(dtype=float)
    if (t <= 0).any():
        raise ModelError("durations must be positive")
    return X, Z, t, delta, sub.index


def _terms(theta, X, Z, t, delta, p, q, want_grad=True):
    """Per-row log-likelihood contributions and (optionally) their gradient rows."""
    beta, gamma, log_alpha = theta[:p], theta[p:p + q], theta[p + q]
    alpha = math.exp(log_alpha)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        eta = Z @ gamma
        r_raw = special.expit(eta)
        r = np.clip(r_raw, PROB_EPS, 1 - PROB_EPS)
        r_free = (r_raw > PROB_EPS) & (r_raw < 1 - PROB_EPS)
        w = alpha * (np.log(t) - X @ beta)          # log (lambda t)^alpha
        u = np.exp(w)
        S = np.exp(-u)
        fail = delta == 1
        logf = log_alpha + w - np.log(t) - u
        mix_raw = 1.0 - r * (1.0 - S)
        mix = np.maximum(mix_raw, PROB_EPS)
        ll = np.where(fail, np.log(r) + logf, np.log(mix))
    if not want_grad:
        return ll, None
    n = len(t)
    G = np.empty((n, p + q + 1))
    with np.errstate(over="ignore", invalid="ignore"):
        dr = np.where(r_free, r * (1 - r), 0.0)      # dr/deta
        mix_free = mix_raw > PROB_EPS
        Su = np.exp(-u + w)                          # S * u without inf*0
        # failure rows
        g_beta_f = alpha * (u - 1.0)
        g_eta_f = np.where(r_free, 1.0 - r, 0.0)
        g_la_f = 1.0 + w - u * w
        # censored rows
        g_beta_c = np.where(mix_free, alpha * r * Su / mix, 0.0)
        g_eta_c = np.where(mix_free, -(1.0 - S) * dr / mix, 0.0)
        g_la_c = np.where(mix_free, -r * Su * w / mix, 0.0)
        g_beta = np.where(fail, g_beta_f, g_beta_c)
        g_eta = np.where(fail, g_eta_f, g_eta_c)
        g_la = np.where(fail, g_la_f, g_la_c)
    G[:, :p] = g_beta[:, None] * X
    G[:, p:p + q] = g_eta[:, None] * Z
    G[:, p + q] = g_la
    return ll, G


def loglik_arrays(theta, X, Z, t, delta, grad=False, index=None):
    """Total log-likelihood (and gradient) from design arrays."""
    p, q = X.shape[1], Z.shape[1]
    theta = np.asarray(theta, dtype=float)
    ll, G = _terms(theta, X, Z, t, delta, p, q, want_grad=grad)
    bad = ~np.isfinite(ll)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        label = index[i] if index is not None else i
        raise ModelError(f"non-finite log-likelihood contribution at row {getattr(label, 'item', lambda: label)()!r}")
    total = float(ll.sum())
    if grad:
        return total, G.sum(axis=0)
    return total


def loglik(spec: SpdurSpec, params, rows: pd.DataFrame, duration_col="duration",
           failure_col="failure") -> float:
    """Log-likelihood of ``params = (beta..., gamma..., log_alpha)`` on ``rows``."""
    X, Z, t, delta, idx = design(spec, rows, duration_col, failure_col)
    return loglik_arrays(params, X, Z, t, delta, index=idx)


def loglik_gradient(spec: SpdurSpec, params, rows: pd.DataFrame, duration_col="duration",
                    failure_col="failure") -> np.ndarray:
    X, Z, t, delta, idx = design(spec, rows, duration_col, failure_col)
    return loglik_arrays(params, X, Z, t, delta, grad=True, index=idx)[1]


def numeric_hessian(grad_fn, theta, rel_step=1e-5):
    """Central-difference Hessian of a function given its analytic gradient."""
    theta = np.asarray(theta, dtype=float)
    k = len(theta)
    H = np.empty((k, k))
    for j in range(k):
        h = rel_step * max(1.0, abs(theta[j]))
        up, down = theta.copy(), theta.copy()
        up[j] += h
        down[j] -= h
        H[:, j] = (grad_fn(up) - grad_fn(down)) / (2 * h)
    return 0.5 * (H + H.T)


def _check_rank(M: np.ndarray, names: list[str], which: str):
    if M.shape[0] == 0:
        raise ModelError("no complete rows to fit")
    rank = np.linalg.matrix_rank(M)
    if rank < M.shape[1]:
        # every column with weight in the null space takes part in a dependency
        null = np.linalg.svd(M)[2][rank:]
        load = np.abs(null).max(axis=0)
        bad = [n for n, v in zip(names, load) if v > 1e-8 * load.max()]
        raise ModelError(f"{which} design matrix is rank deficient; collinear columns: {bad}")


def start_values(X, Z, t, atrisk_rate: float) -> np.ndarray:
    beta0, *_ = np.linalg.lstsq(X, np.log(t), rcond=None)
    gamma0 = np.zeros(Z.shape[1])
    rate = min(max(atrisk_rate, 0.01), 0.99)
    gamma0[0] = math.log(rate / (1 - rate))
    return np.concatenate([beta0, gamma0, [0.0]])


@dataclass
class SpdurFit:
    """A fitted (or hand-specified) split-population Weibull model."""

    spec: SpdurSpec
    beta: np.ndarray
    gamma: np.ndarray
    alpha: float
    vcov: np.ndarray | None = None
    loglik: float = math.nan
    n_obs: int = 0
    converged: bool = True
    iterations: int = 0
    grad_norm: float = math.nan
    message: str = ""

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        self.gamma = np.asarray(self.gamma, dtype=float)
        self.alpha = float(self.alpha)
        if not self.alpha > 0:
            raise ModelError("Weibull shape must be positive")
        if self.vcov is not None:
            self.vcov = np.asarray(self.vcov, dtype=float)

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([self.beta, self.gamma, [math.log(self.alpha)]])

    @property
    def terms(self) -> list[str]:
        return [*self.spec.duration_terms, *self.spec.risk_terms, "log(alpha)"]

    @property
    def se(self) -> np.ndarray:
        if self.vcov is None:
            return np.full(len(self.params), np.nan)
        return np.sqrt(np.clip(np.diag(self.vcov), 0.0, None))

    def pvalues(self) -> np.ndarray:
        """Two-sided normal p-values; for the shape the null is ``log alpha = 0``."""
        z = self.params / self.se
        return 2 * stats.norm.sf(np.abs(z))

    def coef_table(self) -> pd.DataFrame:
        eq = (["duration"] * len(self.beta) + ["risk"] * len(self.gamma) + ["shape"])
        est = self.params.copy()
        se = self.se.copy()
        est[-1], se[-1] = self.alpha, self.alpha * se[-1]   # delta method
        return pd.DataFrame({
            "equation": eq,
            "term": [*self.spec.duration_terms, *self.spec.risk_terms, "Weibull shape alpha"],
            "estimate": est,
            "std_err": se,
            "p": self.pvalues(),
        })

    # serialization -------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "spec": {"duration": list(self.spec.duration), "risk": list(self.spec.risk)},
            "beta": self.beta.tolist(),
            "gamma": self.gamma.tolist(),
            "log_alpha": math.log(self.alpha),
            "alpha": self.alpha,
            "vcov": None if self.vcov is None else self.vcov.tolist(),
            "loglik": self.loglik,
            "n_obs": self.n_obs,
            "converged": self.converged,
            "iterations": self.iterations,
            "grad_norm": self.grad_norm,
            "message": self.message,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SpdurFit":
        return cls(
            spec=SpdurSpec(d["spec"]["duration"], d["spec"]["risk"]),
            beta=d["beta"], gamma=d["gamma"], alpha=d["alpha"],
            vcov=None if d["vcov"] is None else np.array(d["vcov"], dtype=float),
            loglik=d["loglik"], n_obs=d["n_obs"], converged=d["converged"],
            iterations=d.get("iterations", 0), grad_norm=d.get("grad_norm", math.nan),
            message=d.get("message", ""),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SpdurFit":
        return cls.from_dict(json.loads(text))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "SpdurFit":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def fit(spec: SpdurSpec, rows: pd.DataFrame, duration_col="duration", failure_col="failure",
        atrisk_col="atrisk", gtol: float = 1e-6, maxiter: int = 2000, start=None) -> SpdurFit:
    """Maximum-likelihood fit.

    BFGS on the mean negative log-likelihood with the analytic gradient;
    the covariance is the inverse of the observed information from a
    numerical Hessian at the optimum. ``converged`` is set when the
    max-norm of the mean-gradient falls below ``gtol``.
    """
    X, Z, t, delta, idx = design(spec, rows, duration_col, failure_col)
    n = len(t)
    if not (delta == 1).any() or not (delta == 0).any():
        raise ModelError("need at least one failure row and one censored row")
    _check_rank(X, spec.duration_terms, "duration")
    _check_rank(Z, spec.risk_terms, "risk")

    if start is None:
        if atrisk_col in rows.columns:
            rate = float(rows.loc[idx, atrisk_col].mean())
        else:
            rate = float(delta.mean())
        theta0 = start_values(X, Z, t, rate)
    else:
        theta0 = np.asarray(start, dtype=float)

    def objective(theta):
        try:
            ll, g = loglik_arrays(theta, X, Z, t, delta, grad=True)
        except ModelError:
            return np.inf, np.zeros_like(theta)
        return -ll / n, -g / n

    res = optimize.minimize(objective, theta0, jac=True, method="BFGS",
                            options={"gtol": gtol, "maxiter": maxiter})
    theta = res.x
    # polish with a second pass if BFGS stopped on a precision-loss warning
    if not res.success:
        res2 = optimize.minimize(objective, theta, jac=True, method="L-BFGS-B",
                                 options={"gtol": gtol, "maxiter": maxiter, "ftol": 1e-15})
        if res2.fun <= res.fun:
            theta, res = res2.x, res2
    ll, g = loglik_arrays(theta, X, Z, t, delta, grad=True)
    grad_norm = float(np.max(np.abs(g / n)))
    converged = bool(np.isfinite(ll) and grad_norm <= max(gtol, 1e-5))

    def grad_fn(th):
        return loglik_arrays(th, X, Z, t, delta, grad=True)[1]

    H = numeric_hessian(grad_fn, theta)
    vcov = _invert_information(-H)
    beta, gamma, log_alpha = spec.split(theta)
    return SpdurFit(spec, beta, gamma, math.exp(log_alpha), vcov, ll, n, converged,
                    int(res.nit), grad_norm, str(res.message))


def _invert_information(info: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(info)):
        return np.full(info.shape, np.nan)
    vals, vecs = np.linalg.eigh(info)
    if vals.min() <= 0:
        logger.warning("observed information is not positive definite; using pseudo-inverse")
    keep = vals > max(vals.max(), 0.0) * 1e-12
    inv_vals = np.where(keep, 1.0 / np.where(keep, vals, 1.0), 0.0)
    vcov = (vecs * inv_vals) @ vecs.T
    return 0.5 * (vcov + vcov.T)


# -- prediction ---------------------------------------------------------------

def survival(t, lam, alpha):
    with np.errstate(over="ignore"):
        return np.exp(-np.power(lam * np.asarray(t, dtype=float), alpha))


def _linear_parts(model: SpdurFit, rows: pd.DataFrame):
    spec = model.spec
    missing = [c for c in spec.covariates if c not in rows.columns]
    if missing:
        raise KeyError(f"rows are missing covariates {missing}")
    n = len(rows)
    X = np.column_stack([np.ones(n), *(rows[c].to_numpy(dtype=float) for c in spec.duration)])
    Z = np.column_stack([np.ones(n), *(rows[c].to_numpy(dtype=float) for c in spec.risk)])
    if np.isnan(X).any() or np.isnan(Z).any():
        raise ModelError("missing covariate values in prediction rows")
    lam = np.exp(-(X @ model.beta))
    risk = special.expit(Z @ model.gamma)
    return lam, risk


def quantities(lam, risk, alpha, t) -> dict[str, np.ndarray]:
    """Hazard quantities at duration ``t`` for given scale, at-risk probability and shape."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        uncond = alpha * lam ** alpha * np.power(t, alpha - 1)
        s_t = survival(t, lam, alpha)
        s_next = survival(t + 1, lam, alpha)
        step = np.where(s_t > 0, 1.0 - s_next / s_t, 1.0)
        cond_risk = risk * s_t / ((1 - risk) + risk * s_t)
        cond_risk = np.where(np.isnan(cond_risk), 0.0, cond_risk)
    return {
        "risk_prob": np.asarray(risk, dtype=float) * np.ones_like(t),
        "uncond_hazard": uncond,
        "month_step": step,
        "cond_risk": cond_risk,
        "cond_hazard": step * cond_risk,
    }


def predict(model: SpdurFit, rows: pd.DataFrame, duration_col: str = "duration") -> pd.DataFrame:
    """Per-row risk probability, hazards and conditional hazard.

    ``cond_risk`` is the posterior at-risk probability given survival to
    ``t``; ``month_step`` is ``1 - S(t+1)/S(t)``; ``cond_hazard`` is their
    product. Returned frame shares the index of ``rows``.
    """
    lam, risk = _linear_parts(model, rows)
    t = rows[duration_col].to_numpy(dtype=float)
    return pd.DataFrame(quantities(lam, risk, model.alpha, t), index=rows.index)


def hazard_curve(model: SpdurFit, profile: dict, t_range) -> pd.DataFrame:
    """Hazards along ``t_range`` with covariates held at ``profile``."""
    t = np.asarray(t_range, dtype=float)
    if (t <= 0).any():
        raise ValueError("t_range must be positive")
    row = pd.DataFrame([profile])
    lam, risk = _linear_parts(model, row)
    q = quantities(lam[0], risk[0], model.alpha, t)
    return pd.DataFrame({"t": t, "uncond_hazard": q["uncond_hazard"],
                         "cond_risk": q["cond_risk"], "cond_hazard": q["cond_hazard"]})
