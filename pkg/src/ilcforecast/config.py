"""Pipeline configuration (YAML) and its validation."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .panel_store import PanelSchema, parse_year_month
from .spdur import SpdurSpec
from .spells import DEFAULT_BACKFILL


class ConfigError(ValueError):
    pass


DEFAULT_PARTITIONS = {"train_end": "2009-12", "calibration_end": "2012-04", "test_end": "2014-03"}

DEFAULTS = {
    "seed": 0,
    "backfill_start": "{}-{:02d}".format(*DEFAULT_BACKFILL),
    "history_flag": "irr_exit",
    "partitions": DEFAULT_PARTITIONS,
    "transforms": [],
    "variance": {"threshold": 0.5, "covariates": None},
    "fit": {"gtol": 1e-6, "maxiter": 2000},
    "ensemble": {"bound": 50.0, "tol": 1e-8, "max_iter": 10000, "restarts": 0},
    "evaluation": {"outcome": "failure", "beta_f": 1.0, "window": 6},
    "forecast": {"horizon": 6, "top_k": 20},
}

TRANSFORM_OPS = ("events", "lag", "log", "spatial_lag")


@dataclass
class ModelConfig:
    name: str
    spec: SpdurSpec


@dataclass
class PipelineConfig:
    raw: dict
    base_dir: Path
    data: dict[str, Path]
    schema: PanelSchema
    backfill_start: tuple[int, int]
    partitions: dict[str, tuple[int, int]]
    transforms: list[dict]
    models: list[ModelConfig]
    seed: int
    options: dict = field(default_factory=dict)

    @property
    def digest(self) -> str:
        """SHA-256 of the canonical JSON form of the effective configuration."""
        text = json.dumps(self.raw, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def path(self, key: str) -> Path:
        if key not in self.data:
            raise ConfigError(f"config has no data path {key!r}")
        return self.data[key]


def _merge(defaults: dict, given: dict) -> dict:
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _check_transform(i: int, t: dict):
    if not isinstance(t, dict) or t.get("op") not in TRANSFORM_OPS:
        raise ConfigError(f"transforms[{i}]: op must be one of {TRANSFORM_OPS}")
    need = {"events": ("quad",), "lag": ("name",), "log": ("name",),
            "spatial_lag": ("name", "scheme")}[t["op"]]
    missing = [k for k in need if k not in t]
    if missing:
        raise ConfigError(f"transforms[{i}] ({t['op']}): missing keys {missing}")


def from_dict(raw: dict, base_dir=".", seed: int | None = None) -> PipelineConfig:
    """Validate a configuration mapping; relative data paths resolve against ``base_dir``."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    cfg = _merge(DEFAULTS, raw)
    if seed is not None:
        cfg["seed"] = int(seed)
    base_dir = Path(base_dir)

    data = cfg.get("data") or {}
    for key in ("panel", "history"):
        if key not in data:
            raise ConfigError(f"data.{key} is required")
    paths = {k: (base_dir / v).resolve() for k, v in data.items()}

    try:
        backfill = parse_year_month(cfg["backfill_start"])
        parts = {k: parse_year_month(cfg["partitions"][k])
                 for k in ("train_end", "calibration_end", "test_end")}
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad date in config: {exc}") from None
    if not parts["train_end"] < parts["calibration_end"] < parts["test_end"]:
        raise ConfigError("partitions must satisfy train_end < calibration_end < test_end")

    for i, t in enumerate(cfg["transforms"]):
        _check_transform(i, t)

    models = []
    for i, m in enumerate(cfg.get("models") or []):
        if "name" not in m:
            raise ConfigError(f"models[{i}] has no name")
        models.append(ModelConfig(str(m["name"]),
                                  SpdurSpec(tuple(m.get("duration") or ()), tuple(m.get("risk") or ()))))
    if not models:
        raise ConfigError("at least one model is required")
    names = [m.name for m in models]
    if len(set(names)) != len(names):
        raise ConfigError("model names must be unique")
    if int(cfg["forecast"]["horizon"]) < 1:
        raise ConfigError("forecast.horizon must be >= 1")

    options = {k: cfg[k] for k in ("variance", "fit", "ensemble", "evaluation", "forecast",
                                   "history_flag")}
    return PipelineConfig(cfg, base_dir, paths, PanelSchema.from_mapping(cfg.get("schema")),
                          backfill, parts, list(cfg["transforms"]), models, int(cfg["seed"]),
                          options)


def load(path, seed: int | None = None) -> PipelineConfig:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    return from_dict(raw, path.parent, seed)
