"""Staged batch pipeline: spells, covariates, variance, fits, ensemble, evaluation, forecast.

Every stage reads its inputs from the artifact directory written by the
stages before it, so running the stages one by one gives exactly the same
files as :func:`run`. A stage writes into a scratch directory that is
renamed into place only on success; on failure the scratch directory is
removed and a :class:`StageError` names the stage.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import platform
import re
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
import scipy

from . import __version__, ebma, evaluation, forecaster, spatial, spdur, spells, variance
from .config import ConfigError, PipelineConfig
from .panel_store import (OUTCOME_COLUMNS, EventSchema, add_event_counts, covariate_names,
                          ingest_events, ingest_panel, lag_covariate, log_transform, month_index)

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
STAGE_FILE = "stage.json"


class StageError(RuntimeError):
    def __init__(self, stage: str, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class Stage:
    name: str
    directory: str
    requires: tuple[tuple[str, str], ...]   # (stage name, relative file)


STAGES = (
    Stage("build-spells", "spells", ()),
    Stage("build-lags", "covariates", (("build-spells", "spells/panel_spells.csv"),)),
    Stage("decompose-variance", "variance", (("build-lags", "covariates/panel.csv"),)),
    Stage("fit", "fits", (("build-lags", "covariates/panel.csv"),)),
    Stage("calibrate", "ensemble", (("build-lags", "covariates/panel.csv"),
                                    ("fit", "fits/stage.json"))),
    Stage("evaluate", "evaluation", (("calibrate", "ensemble/predictions.csv"),
                                     ("calibrate", "ensemble/ensemble.json"))),
    Stage("forecast", "forecast", (("build-lags", "covariates/panel.csv"),
                                   ("fit", "fits/stage.json"),
                                   ("calibrate", "ensemble/ensemble.json"))),
)
STAGE_NAMES = tuple(s.name for s in STAGES)


def slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", name).strip("_").lower()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_csv(frame: pd.DataFrame, path: Path):
    frame.to_csv(path, index=False, lineterminator="\n")


def _read_csv(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip", keep_default_na=True)


def _write_json(obj, path: Path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, Path):
        return str(o)
    raise TypeError(type(o))


def _ym(t: tuple[int, int]) -> str:
    return f"{t[0]}-{t[1]:02d}"


def partition_labels(rows: pd.DataFrame, cfg: PipelineConfig) -> np.ndarray:
    t = month_index(rows["year"].to_numpy(), rows["month"].to_numpy())
    p = cfg.partitions
    bounds = [month_index(*p["train_end"]), month_index(*p["calibration_end"]),
              month_index(*p["test_end"])]
    return np.select([t <= bounds[0], t <= bounds[1], t <= bounds[2]],
                     ["train", "calibration", "test"], "beyond")


# -- stages -------------------------------------------------------------------

def _build_spells(cfg: PipelineConfig, out: Path, work: Path) -> dict:
    flag = cfg.options["history_flag"]
    panel = ingest_panel(cfg.path("panel"), cfg.schema)
    history = spells.read_history(cfg.path("history"), flag)
    joined, table = spells.build_spells(history, panel, cfg.backfill_start, flag, return_spells=True)
    _write_csv(joined, work / "panel_spells.csv")
    _write_csv(table, work / "spells.csv")
    if {"irr_exit", "irr_entry"} <= set(joined.columns):
        tab = spells.cross_tabulate(joined, "irr_exit", "irr_entry")
        tab.index.name, tab.columns.name = "irr_exit\\irr_entry", None
        _write_csv(tab.reset_index(), work / "crosstab_exit_entry.csv")
    return {"rows": len(joined), "spells": len(table),
            "failures": int(joined["failure"].sum()),
            "backfill_start": _ym(cfg.backfill_start)}


def _weights_for(t: dict, panel: pd.DataFrame, cfg: PipelineConfig, cache: dict):
    scheme = t["scheme"]
    key = (scheme, tuple(t.get("features", ())))
    if key in cache:
        return cache[key]
    if scheme in ("knn4", "centdist_std"):
        cent = spatial.read_centroids(cfg.path("centroids"))
        w = spatial.knn4_weights(cent) if scheme == "knn4" else spatial.centdist_weights(cent)
    elif scheme.startswith("gower_"):
        feats = t.get("features")
        if not feats:
            raise ConfigError(f"spatial_lag with {scheme} needs a features list")
        # static weights from training-window means only
        means = spatial.country_feature_means(panel, feats, end=cfg.partitions["train_end"])
        w = spatial.gower_weights(means, scheme.split("_", 1)[1])
    else:
        raise ConfigError(f"unknown weighting scheme {scheme!r}")
    cache[key] = w
    return w


def apply_transforms(panel: pd.DataFrame, cfg: PipelineConfig):
    """Apply the configured transforms in order; returns the panel and weight matrices used."""
    cache: dict = {}
    events = None
    for t in cfg.transforms:
        op = t["op"]
        if op == "events":
            if events is None:
                events = ingest_events(cfg.path("events"),
                                       EventSchema.from_mapping(cfg.raw.get("event_schema")))
            direction = tuple(t["direction"]) if t.get("direction") else None
            panel = add_event_counts(panel, events, direction, t["quad"], t.get("new_name"))
        elif op == "lag":
            panel = lag_covariate(panel, t["name"], int(t.get("k", 1)))
        elif op == "log":
            panel = log_transform(panel, t["name"], t.get("base", 10), float(t.get("offset", 1.0)),
                                  t.get("new_name"))
        elif op == "spatial_lag":
            w = _weights_for(t, panel, cfg, cache)
            panel = spatial.spatial_lag(panel, t["name"], w, t.get("new_name"))
    return panel, list(cache.values())


def _build_lags(cfg: PipelineConfig, out: Path, work: Path) -> dict:
    panel = _read_csv(out / "spells" / "panel_spells.csv")
    panel, weights = apply_transforms(panel, cfg)
    _write_csv(panel, work / "panel.csv")
    for w in weights:
        frame = w.to_frame()
        frame.index.name = "country_id"
        _write_csv(frame.reset_index(), work / f"weights_{w.scheme}.csv")
    return {"columns": list(panel.columns), "weights": sorted(w.scheme for w in weights)}


def _model_covariates(panel: pd.DataFrame) -> list[str]:
    skip = set(spells.DURATION_COLUMNS) | set(OUTCOME_COLUMNS)
    return [c for c in covariate_names(panel) if c not in skip]


def _decompose(cfg: PipelineConfig, out: Path, work: Path) -> dict:
    panel = _read_csv(out / "covariates" / "panel.csv")
    opts = cfg.options["variance"]
    names = opts.get("covariates") or _model_covariates(panel)
    table = variance.variance_table(panel, names, float(opts.get("threshold", 0.5)))
    _write_csv(table, work / "variance_report.csv")
    points = table[["covariate", "ss_total", "between_fraction"]].rename(
        columns={"ss_total": "x", "between_fraction": "y"})
    _write_csv(points, work / "variance_points.csv")
    return {"covariates": list(table["covariate"]),
            "skipped": sorted(set(names) - set(table["covariate"]))}


def _check_formulas(cfg: PipelineConfig, panel: pd.DataFrame):
    for m in cfg.models:
        missing = [c for c in m.spec.covariates if c not in panel.columns]
        if missing:
            raise ConfigError(f"model {m.name!r} references unknown covariates {missing}")


def _train_rows(cfg: PipelineConfig, panel: pd.DataFrame) -> pd.DataFrame:
    rows = panel.loc[partition_labels(panel, cfg) == "train"].copy()
    rows["atrisk_train"] = spells.atrisk_as_of(rows)
    return rows


def _fit(cfg: PipelineConfig, out: Path, work: Path, jobs: int = 1) -> dict:
    panel = _read_csv(out / "covariates" / "panel.csv")
    _check_formulas(cfg, panel)
    train = _train_rows(cfg, panel)
    opts = cfg.options["fit"]

    def one(m):
        return spdur.fit(m.spec, train, atrisk_col="atrisk_train", gtol=float(opts["gtol"]),
                         maxiter=int(opts["maxiter"]))

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        fits = list(pool.map(one, cfg.models))
    prov = {"train_end": _ym(cfg.partitions["train_end"]), "train_rows": len(train), "models": {}}
    t = month_index(train["year"].to_numpy(), train["month"].to_numpy())
    prov["train_last_month"] = None
    if len(t):
        y, m0 = divmod(int(t.max()), 12)
        prov["train_last_month"] = f"{y}-{m0 + 1:02d}"
    for m, f in zip(cfg.models, fits):
        f.save(work / f"{slug(m.name)}.json")
        _write_csv(f.coef_table(), work / f"{slug(m.name)}_coefficients.csv")
        if not f.converged:
            logger.warning("model %s did not converge: %s", m.name, f.message)
        prov["models"][m.name] = {"file": f"{slug(m.name)}.json", "n_obs": f.n_obs,
                                  "loglik": f.loglik, "converged": f.converged}
    return prov


def _load_fits(cfg: PipelineConfig, out: Path) -> dict[str, spdur.SpdurFit]:
    return {m.name: spdur.SpdurFit.load(out / "fits" / f"{slug(m.name)}.json") for m in cfg.models}


def component_predictions(fits: dict, panel: pd.DataFrame) -> pd.DataFrame:
    """Conditional hazard of each model on every row with complete covariates (NaN elsewhere)."""
    cols = {}
    for name, f in fits.items():
        ok = ~panel[f.spec.covariates].isna().any(axis=1) if f.spec.covariates else \
            pd.Series(True, index=panel.index)
        values = np.full(len(panel), np.nan)
        if ok.any():
            values[ok.to_numpy()] = spdur.predict(f, panel.loc[ok])["cond_hazard"].to_numpy()
        cols[name] = values
    return pd.DataFrame(cols, index=panel.index)


def _calibrate(cfg: PipelineConfig, out: Path, work: Path) -> dict:
    panel = _read_csv(out / "covariates" / "panel.csv")
    fits = _load_fits(cfg, out)
    outcome = cfg.options["evaluation"]["outcome"]
    preds = component_predictions(fits, panel)
    frame = pd.concat([panel[["country_id", "year", "month"]],
                       pd.Series(partition_labels(panel, cfg), index=panel.index, name="partition"),
                       panel[outcome].rename("y").astype(int), preds], axis=1)
    _write_csv(frame, work / "predictions.csv")

    calib = frame[frame["partition"] == "calibration"].dropna(subset=list(fits))
    opts = cfg.options["ensemble"]
    ens = ebma.fit_ensemble(calib[list(fits)], calib["y"].to_numpy(), bound=float(opts["bound"]),
                            tol=float(opts["tol"]), max_iter=int(opts["max_iter"]),
                            restarts=int(opts["restarts"]), seed=cfg.seed)
    ens.save(work / "ensemble.json")
    _write_csv(ens.weight_table(), work / "weights.csv")
    return {"calibration_end": _ym(cfg.partitions["calibration_end"]),
            "calibration_rows": len(calib), "calibration_events": int(calib["y"].sum()),
            "converged": ens.converged, "seed": cfg.seed}


ENSEMBLE = "Ensemble"


def _evaluate(cfg: PipelineConfig, out: Path, work: Path) -> dict:
    frame = _read_csv(out / "ensemble" / "predictions.csv")
    ens = ebma.EnsembleFit.load(out / "ensemble" / "ensemble.json")
    opts = cfg.options["evaluation"]
    beta_f, window = float(opts["beta_f"]), int(opts["window"])
    complete = ~frame[ens.models].isna().any(axis=1)
    frame[ENSEMBLE] = np.nan
    frame.loc[complete, ENSEMBLE] = ens.predict(frame.loc[complete, ens.models])
    _write_csv(frame, work / "scored.csv")

    models = [ENSEMBLE, *ens.models]
    weights = dict(zip(ens.models, ens.weights.tolist()))
    report = evaluation.fit_report(frame, models, weights, beta_f)
    _write_csv(report, work / "fit_report.csv")

    fuzzy_rows = []
    for _, r in report[report["block"] == "monthly"].iterrows():
        if np.isnan(r["tau"]):
            continue
        sub = frame[frame["partition"] == r["partition"]].dropna(subset=[r["model"]])
        fuzzy_rows.append({"partition": r["partition"], "model": r["model"], "tau": r["tau"],
                           "window": window, "precision": r["precision"],
                           "fuzzy_precision": evaluation.fuzzy_precision(
                               sub, r["tau"], window, prediction=r["model"], outcome="y")})
    _write_csv(pd.DataFrame(fuzzy_rows), work / "fuzzy_precision.csv")

    test = frame[frame["partition"] == "test"]
    for m in models:
        sub = test.dropna(subset=[m])
        _write_csv(evaluation.separation_plot_data(sub[m], sub["y"]), work / f"separation_{slug(m)}.csv")
        if 0 < sub["y"].sum() < len(sub):
            _write_csv(evaluation.roc_curve(sub[m], sub["y"]), work / f"roc_{slug(m)}.csv")
    return {"scored_rows": int(complete.sum()), "models": models}


def _forecast(cfg: PipelineConfig, out: Path, work: Path) -> dict:
    panel = _read_csv(out / "covariates" / "panel.csv")
    fits = _load_fits(cfg, out)
    ens = ebma.EnsembleFit.load(out / "ensemble" / "ensemble.json")
    opts = cfg.options["forecast"]
    t = month_index(panel["year"].to_numpy(), panel["month"].to_numpy())
    t_end = month_index(*cfg.partitions["test_end"])
    if not (t <= t_end).any():
        raise ValueError("no panel rows at or before test_end")
    last_t = int(t[t <= t_end].max())
    last_rows = panel.loc[t == last_t]
    result = forecaster.forecast(ens, last_rows, int(opts["horizon"]), components=fits)
    if not result.entries:
        raise ValueError("no country has complete covariates in the last month")
    ranked = forecaster.rank_table(result.entries)
    _write_csv(forecaster.forecast_frame(ranked), work / "forecast.csv")
    _write_csv(pd.DataFrame({"country_id": [e.country_id for e in ranked],
                             "p_window": [e.p_window for e in ranked]}), work / "map.csv")
    text = forecaster.format_report(result.entries, int(opts["top_k"]))
    if result.excluded:
        text += "\nExcluded (missing covariates): " + ", ".join(map(str, result.excluded)) + "\n"
    (work / "report.txt").write_text(text, encoding="utf-8")
    y, m = divmod(last_t, 12)
    return {"data_month": f"{y}-{m + 1:02d}", "horizon": int(opts["horizon"]),
            "excluded": result.excluded}


RUNNERS = {
    "build-spells": _build_spells,
    "build-lags": _build_lags,
    "decompose-variance": _decompose,
    "fit": _fit,
    "calibrate": _calibrate,
    "evaluate": _evaluate,
    "forecast": _forecast,
}


# -- orchestration --------------------------------------------------------------

def _versions() -> dict:
    return {"ilcforecast": __version__, "numpy": np.__version__, "pandas": pd.__version__,
            "scipy": scipy.__version__, "python": platform.python_version()}


def _write_manifest(cfg: PipelineConfig, out: Path):
    stages = {}
    for s in STAGES:
        f = out / s.directory / STAGE_FILE
        if f.exists():
            with open(f, encoding="utf-8") as fh:
                stages[s.name] = json.load(fh)
    manifest = {"config_sha256": cfg.digest, "seed": cfg.seed, "versions": _versions(),
                "partitions": {k: _ym(v) for k, v in cfg.partitions.items()},
                "stages": stages}
    tmp = out / (MANIFEST + ".partial")
    _write_json(manifest, tmp)
    os.replace(tmp, out / MANIFEST)


def run_stage(cfg: PipelineConfig, name: str, out, jobs: int = 1) -> Path:
    """Run one stage into ``out`` (its upstream artifacts must exist)."""
    stage = next((s for s in STAGES if s.name == name), None)
    if stage is None:
        raise ValueError(f"unknown stage {name!r}; choose from {STAGE_NAMES}")
    out = Path(out)
    for prior, rel in stage.requires:
        if not (out / rel).exists():
            raise StageError(name, f"missing {rel}; run stage {prior!r} first")
    out.mkdir(parents=True, exist_ok=True)
    work = out / f".{stage.directory}.partial"
    if work.exists():
        shutil.rmtree(work)
    work.mkdir()
    try:
        runner = RUNNERS[name]
        prov = runner(cfg, out, work, jobs) if name == "fit" else runner(cfg, out, work)
        outputs = {p.name: sha256_file(p) for p in sorted(work.iterdir())}
        _write_json({"stage": name, "config_sha256": cfg.digest, "provenance": prov,
                     "inputs": {rel: sha256_file(out / rel) for _, rel in stage.requires},
                     "outputs": outputs}, work / STAGE_FILE)
    except Exception as exc:
        shutil.rmtree(work, ignore_errors=True)
        raise StageError(name, exc) from exc
    final = out / stage.directory
    if final.exists():
        shutil.rmtree(final)
    os.replace(work, final)
    _write_manifest(cfg, out)
    logger.info("stage %s done -> %s", name, final)
    return final


def run(cfg: PipelineConfig, out, jobs: int = 1, stages=STAGE_NAMES) -> Path:
    """Run the stages in order; returns the artifact directory."""
    out = Path(out)
    for name in stages:
        run_stage(cfg, name, out, jobs)
    return out


def verify_manifest(out) -> list[str]:
    """Files whose hash differs from the manifest (empty when everything matches)."""
    out = Path(out)
    with open(out / MANIFEST, encoding="utf-8") as fh:
        manifest = json.load(fh)
    bad = []
    directories = {s.name: s.directory for s in STAGES}
    for stage, rec in manifest["stages"].items():
        for fname, digest in rec["outputs"].items():
            p = out / directories[stage] / fname
            if not p.exists() or sha256_file(p) != digest:
                bad.append(str(p.relative_to(out)))
    return bad
