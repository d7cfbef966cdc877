"""Country-month panel ingestion and covariate transforms.

A panel is a :class:`pandas.DataFrame` with the identifier columns
``country_id``, ``year``, ``month``, the outcome flags ``irr_entry``,
``irr_exit`` and ``ilc``, and any number of covariate columns. Missing
covariate values are ``NaN`` and propagate through every transform. All
transforms return a new frame; the input is never modified.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

ID_COLUMNS = ("country_id", "year", "month")
OUTCOME_COLUMNS = ("irr_entry", "irr_exit", "ilc")
SECTORS = ("GOV", "DIS", "REB", "ETH", "other")


class PanelError(ValueError):
    """Raised for malformed panel or event input."""


class QuadCategory(str, Enum):
    VERBAL_COOP = "verb.coop"
    MATERIAL_COOP = "matl.coop"
    VERBAL_CONF = "verb.conf"
    MATERIAL_CONF = "matl.conf"


def quad_of(cameo_root: int) -> QuadCategory:
    """Map a CAMEO root code (1-20) to its quad category."""
    root = int(cameo_root)
    if not 1 <= root <= 20:
        raise PanelError(f"CAMEO root code out of range 1-20: {cameo_root!r}")
    if root <= 5:
        return QuadCategory.VERBAL_COOP
    if root <= 8:
        return QuadCategory.MATERIAL_COOP
    if root <= 13:
        return QuadCategory.VERBAL_CONF
    return QuadCategory.MATERIAL_CONF


def month_index(year, month):
    """Months since year 0; works on scalars and arrays."""
    if np.isscalar(year):
        return int(year) * 12 + int(month) - 1
    return np.asarray(year, dtype=np.int64) * 12 + np.asarray(month, dtype=np.int64) - 1


def from_month_index(idx):
    idx = int(idx)
    return idx // 12, idx % 12 + 1


def parse_year_month(value) -> tuple[int, int]:
    """Parse ``"YYYY-MM"`` (or a ``(year, month)`` pair) into a tuple."""
    if isinstance(value, (tuple, list)):
        year, month = int(value[0]), int(value[1])
    else:
        text = str(value).strip()
        try:
            y, m = text.split("-")[:2]
            year, month = int(y), int(m)
        except ValueError:
            raise PanelError(f"expected YYYY-MM, got {value!r}") from None
    if not 1 <= month <= 12:
        raise PanelError(f"month out of range in {value!r}")
    return year, month


@dataclass(frozen=True)
class PanelSchema:
    """Column mapping from a source CSV onto the canonical panel columns.

    If ``date`` is set it names a ``YYYY-MM`` column used instead of the
    separate ``year``/``month`` columns. ``irr_entry``/``irr_exit`` may be
    ``None`` when the source only carries the combined ILC flag.
    """

    country_id: str = "country_id"
    year: str = "year"
    month: str = "month"
    date: str | None = None
    irr_entry: str | None = "irr_entry"
    irr_exit: str | None = "irr_exit"
    ilc: str = "ilc"
    text_columns: tuple[str, ...] = ("name",)

    @classmethod
    def from_mapping(cls, mapping: dict | None) -> "PanelSchema":
        mapping = dict(mapping or {})
        if "text_columns" in mapping:
            mapping["text_columns"] = tuple(mapping["text_columns"])
        return cls(**mapping)


@dataclass(frozen=True)
class EventSchema:
    country_id: str = "country_id"
    year: str = "year"
    month: str = "month"
    source: str = "source_sector"
    target: str = "target_sector"
    cameo_root: str = "cameo_root"
    count: str = "count"

    @classmethod
    def from_mapping(cls, mapping: dict | None) -> "EventSchema":
        return cls(**dict(mapping or {}))


def _parse_int(raw: str, row: int, column: str, allow_missing=False):
    text = raw.strip()
    if text == "" or text.upper() == "NA":
        if allow_missing:
            return None
        raise PanelError(f"row {row}: missing value in required column {column!r}")
    try:
        value = float(text)
    except ValueError:
        raise PanelError(f"row {row}: column {column!r} is not a number: {raw!r}") from None
    if not value.is_integer():
        raise PanelError(f"row {row}: column {column!r} is not an integer: {raw!r}")
    return int(value)


def _parse_flag(raw: str, row: int, column: str, allow_missing=False):
    value = _parse_int(raw, row, column, allow_missing)
    if value not in (0, 1, None):
        raise PanelError(f"row {row}: column {column!r} must be 0 or 1, got {raw!r}")
    return value


def _parse_float(raw: str, row: int, column: str) -> float:
    text = raw.strip()
    if text == "" or text.upper() in ("NA", "NAN"):
        return math.nan
    try:
        return float(text)
    except ValueError:
        raise PanelError(f"row {row}: covariate {column!r} is not numeric: {raw!r}") from None


def ingest_panel(path, schema: PanelSchema | None = None) -> pd.DataFrame:
    """Read and validate a country-month panel CSV.

    Row numbers in error messages count data rows from 1 (the header is
    not counted). The result is sorted by ``(country_id, year, month)``.
    """
    schema = schema or PanelSchema()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    return validate_panel(raw, schema)


def validate_panel(raw: pd.DataFrame, schema: PanelSchema | None = None) -> pd.DataFrame:
    """Validate a frame of raw string cells (see :func:`ingest_panel`)."""
    schema = schema or PanelSchema()
    raw = raw.astype(str)
    required = [schema.country_id, schema.ilc]
    required += [schema.date] if schema.date else [schema.year, schema.month]
    missing = [c for c in required if c not in raw.columns]
    if missing:
        raise PanelError(f"panel is missing required columns: {missing}")

    mapped = {schema.country_id, schema.ilc, schema.irr_entry, schema.irr_exit}
    mapped |= {schema.date} if schema.date else {schema.year, schema.month}
    covariates = [c for c in raw.columns if c not in mapped and c not in schema.text_columns]
    text_cols = [c for c in schema.text_columns if c in raw.columns]
    has_entry = schema.irr_entry is not None and schema.irr_entry in raw.columns
    has_exit = schema.irr_exit is not None and schema.irr_exit in raw.columns

    records = []
    for i, rec in enumerate(raw.to_dict("records"), start=1):
        cid = _parse_int(rec[schema.country_id], i, schema.country_id)
        if schema.date:
            try:
                year, month = parse_year_month(rec[schema.date])
            except PanelError as exc:
                raise PanelError(f"row {i}: {exc}") from None
        else:
            year = _parse_int(rec[schema.year], i, schema.year)
            month = _parse_int(rec[schema.month], i, schema.month)
            if not 1 <= month <= 12:
                raise PanelError(f"row {i}: month must be 1-12, got {month}")
        ilc = _parse_flag(rec[schema.ilc], i, schema.ilc)
        entry = _parse_flag(rec[schema.irr_entry], i, schema.irr_entry, True) if has_entry else None
        exit_ = _parse_flag(rec[schema.irr_exit], i, schema.irr_exit, True) if has_exit else None
        if entry is not None and exit_ is not None and ilc != int(entry == 1 or exit_ == 1):
            raise PanelError(
                f"row {i}: inconsistent outcome flags irr_entry={entry}, irr_exit={exit_}, ilc={ilc}"
            )
        out = {"country_id": cid, "year": year, "month": month,
               "irr_entry": entry, "irr_exit": exit_, "ilc": ilc}
        for c in text_cols:
            out[c] = rec[c]
        for c in covariates:
            out[c] = _parse_float(rec[c], i, c)
        records.append(out)

    columns = list(ID_COLUMNS) + list(OUTCOME_COLUMNS) + text_cols + covariates
    panel = pd.DataFrame.from_records(records, columns=columns)
    for c in ("irr_entry", "irr_exit"):
        panel[c] = panel[c].astype("Int64")
    panel[list(ID_COLUMNS) + ["ilc"]] = panel[list(ID_COLUMNS) + ["ilc"]].astype("int64")
    for c in covariates:
        panel[c] = panel[c].astype(float)

    dup = panel.duplicated(list(ID_COLUMNS), keep=False)
    if dup.any():
        first = panel.loc[dup].iloc[0]
        raise PanelError(
            "duplicate key (country_id={}, year={}, month={})".format(
                int(first.country_id), int(first.year), int(first.month))
        )
    return panel.sort_values(list(ID_COLUMNS), kind="mergesort").reset_index(drop=True)


def covariate_names(panel: pd.DataFrame) -> list[str]:
    """Numeric covariate columns of a panel (everything but ids/outcomes/text)."""
    skip = set(ID_COLUMNS) | set(OUTCOME_COLUMNS)
    return [c for c in panel.columns
            if c not in skip and pd.api.types.is_numeric_dtype(panel[c])]


def _require(panel: pd.DataFrame, name: str):
    if name not in panel.columns:
        raise KeyError(f"unknown covariate {name!r}")


# -- events -----------------------------------------------------------------

def ingest_events(path, schema: EventSchema | None = None) -> pd.DataFrame:
    """Read an event CSV; sector labels outside GOV/DIS/REB/ETH become ``other``."""
    schema = schema or EventSchema()
    raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    missing = [c for c in (schema.country_id, schema.year, schema.month, schema.source,
                           schema.target, schema.cameo_root, schema.count)
               if c not in raw.columns]
    if missing:
        raise PanelError(f"event file is missing columns: {missing}")
    rows = []
    for i, rec in enumerate(raw.to_dict("records"), start=1):
        root = _parse_int(rec[schema.cameo_root], i, schema.cameo_root)
        if not 1 <= root <= 20:
            raise PanelError(f"row {i}: cameo_root must be in 1-20, got {root}")
        count = _parse_int(rec[schema.count], i, schema.count)
        if count < 0:
            raise PanelError(f"row {i}: negative event count {count}")
        month = _parse_int(rec[schema.month], i, schema.month)
        if not 1 <= month <= 12:
            raise PanelError(f"row {i}: month must be 1-12, got {month}")
        rows.append({
            "country_id": _parse_int(rec[schema.country_id], i, schema.country_id),
            "year": _parse_int(rec[schema.year], i, schema.year),
            "month": month,
            "source_sector": _normalize_sector(rec[schema.source]),
            "target_sector": _normalize_sector(rec[schema.target]),
            "cameo_root": root,
            "count": count,
        })
    cols = ["country_id", "year", "month", "source_sector", "target_sector", "cameo_root", "count"]
    return pd.DataFrame.from_records(rows, columns=cols)


def _normalize_sector(label: str) -> str:
    label = label.strip()
    return label if label in SECTORS[:-1] else "other"


def validate_events(events: pd.DataFrame) -> pd.DataFrame:
    roots = events["cameo_root"].astype(int)
    if ((roots < 1) | (roots > 20)).any():
        raise PanelError("cameo_root outside 1-20")
    for col in ("source_sector", "target_sector"):
        bad = set(events[col]) - set(SECTORS)
        if bad:
            raise PanelError(f"unknown sector label(s) in {col}: {sorted(bad)}")
    if (events["count"] < 0).any():
        raise PanelError("negative event count")
    return events


def event_variable_name(quad: QuadCategory | str, direction=None) -> str:
    """Variable name in the ``i.matl.conf.DIStGOV`` convention."""
    quad = QuadCategory(quad)
    if direction is None:
        return f"i.{quad.value}"
    return f"i.{quad.value}.{direction[0]}t{direction[1]}"


def aggregate_events(events: pd.DataFrame, direction: tuple[str, str] | None,
                     quad: QuadCategory | str) -> pd.DataFrame:
    """Monthly event counts per country for one quad category and actor direction.

    ``direction`` is ``(source_sector, target_sector)``; it is directional,
    so ``("DIS", "GOV")`` and ``("GOV", "DIS")`` are distinct. ``None``
    disables the sector filter. Returns columns ``country_id, year, month,
    count`` with one row per country-month that has any event at all, so
    months where other quads occurred show an explicit zero.
    """
    quad = QuadCategory(quad)
    validate_events(events)
    if direction is not None:
        for label in direction:
            if label not in SECTORS[:-1]:
                raise PanelError(f"unknown sector label for aggregation: {label!r}")
    keys = ["country_id", "year", "month"]
    quads = events["cameo_root"].map(lambda r: quad_of(r))
    mask = quads == quad
    if direction is not None:
        mask &= (events["source_sector"] == direction[0]) & (events["target_sector"] == direction[1])
    selected = events["count"].where(mask, 0)
    out = (events[keys].assign(count=selected)
           .groupby(keys, sort=True, as_index=False)["count"].sum())
    out["count"] = out["count"].astype("int64")
    return out


def add_event_counts(panel: pd.DataFrame, events: pd.DataFrame, direction, quad,
                     name: str | None = None) -> pd.DataFrame:
    """Join an event aggregation onto the panel; months without events get 0."""
    name = name or event_variable_name(quad, direction)
    counts = aggregate_events(events, direction, quad).rename(columns={"count": name})
    out = panel.drop(columns=[name], errors="ignore").merge(counts, on=list(ID_COLUMNS), how="left")
    out[name] = out[name].fillna(0).astype(float)
    return out


# -- transforms -------------------------------------------------------------

def shift_covariate(panel: pd.DataFrame, name: str, k: int, new_name: str) -> pd.DataFrame:
    """Calendar-aware shift: ``new[t] = old[t - k]`` within each country.

    Negative ``k`` leads. Months absent from the panel yield missing values,
    so gaps are never bridged by row order.
    """
    _require(panel, name)
    idx = month_index(panel["year"].to_numpy(), panel["month"].to_numpy())
    source = pd.DataFrame({
        "country_id": panel["country_id"].to_numpy(),
        "_idx": idx + k,
        new_name: panel[name].to_numpy(dtype=float),
    })
    target = pd.DataFrame({"country_id": panel["country_id"].to_numpy(), "_idx": idx})
    shifted = target.merge(source, on=["country_id", "_idx"], how="left")[new_name].to_numpy()
    out = panel.copy()
    out[new_name] = shifted
    return out


def lag_covariate(panel: pd.DataFrame, name: str, k: int = 1) -> pd.DataFrame:
    """Add ``{name}.l{k}``, the value ``k`` calendar months earlier."""
    if k < 1:
        raise ValueError("lag order k must be >= 1")
    return shift_covariate(panel, name, k, f"{name}.l{k}")


def log_transform(panel: pd.DataFrame, name: str, base=10, offset: float = 1.0,
                  new_name: str | None = None) -> pd.DataFrame:
    """Add ``log_base(x + offset)``; base is 10 or ``"e"``."""
    _require(panel, name)
    x = panel[name].to_numpy(dtype=float)
    present = ~np.isnan(x)
    if (x[present] < 0).any():
        raise PanelError(f"log transform of negative values in {name!r}")
    if base in ("e", math.e):
        values, prefix = np.log(x + offset), "log"
    elif base in (10, "10"):
        values, prefix = np.log10(x + offset), "log10"
    else:
        raise ValueError(f"unsupported log base {base!r}")
    if new_name is None:
        new_name = f"{prefix}({name} + {offset:g})"
    out = panel.copy()
    out[new_name] = values
    return out
