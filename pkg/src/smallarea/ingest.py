"""File loading: constraint tables, survey microdata, crosswalks, external
reference tables and the pipeline configuration.

All files are UTF-8 CSV with comma separators; zone/category labels may not
contain commas. The configuration is YAML with the key paths documented on
PipelineConfig.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .indicators import MpiDimension, MpiIndicator, MpiSpec
from .schema import (
    ConstraintTable,
    Schema,
    SchemaError,
    SurveyDataset,
    SurveyRecord,
    VariableDef,
)

log = logging.getLogger(__name__)


class IngestError(ValueError):
    """Malformed input file or configuration."""


@dataclass(frozen=True)
class Crosswalk:
    """Many-to-one mapping from fine categories to grouped categories for one
    variable (e.g. industry sections aggregated for external validation)."""

    variable: str
    mapping: dict  # fine category -> group category

    def group(self, fine: str) -> str:
        try:
            return self.mapping[fine]
        except KeyError:
            raise IngestError(
                f"category {fine!r} missing from crosswalk for {self.variable!r}"
            ) from None

    def groups(self) -> tuple[str, ...]:
        seen = []
        for g in self.mapping.values():
            if g not in seen:
                seen.append(g)
        return tuple(seen)


@dataclass(frozen=True)
class PipelineConfig:
    """Fully defaulted run configuration.

    YAML layout (defaults in parentheses):

      schema:
        constraint_variables: [{name, categories: [...]}, ...]
        external_variables:   [{name, categories: [...]}, ...]
        income_field: income
        household_field: household_id
        deprivation_fields: [...]
      paths:
        constraints: ...   survey: ...   output_dir: ...
        external_actual: ...   crosswalk: ...      # optional
      ipf: {max_iterations (100), tolerance (1e-6)}
      seed: (0)
      equivalize: (false)
      poverty:
        arop_fraction: (0.6)
        md_threshold: (3)
        mpi: {cutoff, dimensions: [{name, weight, indicators: [...]}]}
    """

    schema: Schema
    constraints_path: Path
    survey_path: Path
    output_dir: Path
    external_actual_path: Path | None = None
    crosswalk_path: Path | None = None
    max_iterations: int = 100
    tolerance: float = 1e-6
    seed: int = 0
    equivalize: bool = False
    arop_fraction: float = 0.6
    md_threshold: int = 3
    mpi_spec: MpiSpec | None = None

    def __post_init__(self):
        if self.tolerance <= 0:
            raise IngestError(f"ipf.tolerance must be > 0, got {self.tolerance}")
        if self.max_iterations < 1:
            raise IngestError("ipf.max_iterations must be >= 1")
        if not (0 < self.arop_fraction < 1):
            raise IngestError(
                f"poverty.arop_fraction must be in (0,1), got {self.arop_fraction}"
            )
        if self.md_threshold < 1:
            raise IngestError("poverty.md_threshold must be >= 1")
        if not (0 <= self.seed < 2**64):
            raise IngestError("seed must fit in 64 unsigned bits")


# --------------------------------------------------------------------------
# Constraint tables
# --------------------------------------------------------------------------

def load_constraints(path, schema: Schema):
    """Read long-format `zone_id,variable,category,count` into one
    ConstraintTable per constraint variable. Zones are ordered by first
    appearance in the file; absent (zone, category) cells become 0."""
    path = Path(path)
    vardefs = {v.name: v for v in schema.constraint_vars}
    zones: list[str] = []
    zone_index: dict[str, int] = {}
    cells: dict[str, dict] = {name: {} for name in vardefs}

    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["zone_id", "variable", "category", "count"]:
            raise IngestError(
                f"{path}: expected header 'zone_id,variable,category,count', "
                f"got {header}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise IngestError(f"{path}: line {lineno}: expected 4 fields")
            zone, var, cat, raw = row
            if var not in vardefs:
                raise IngestError(
                    f"{path}: unknown variable {var!r} at line {lineno}"
                )
            if cat not in vardefs[var].categories:
                raise IngestError(
                    f"{path}: unknown category {cat!r} at line {lineno}"
                )
            try:
                count = float(raw)
            except ValueError:
                raise IngestError(
                    f"{path}: non-numeric count {raw!r} at line {lineno}"
                ) from None
            if not math.isfinite(count) or count < 0:
                raise IngestError(
                    f"{path}: invalid count {raw!r} at line {lineno}"
                )
            if zone not in zone_index:
                zone_index[zone] = len(zones)
                zones.append(zone)
            cells[var][(zone, cat)] = count

    tables = []
    for var in schema.constraint_vars:
        counts = np.zeros((len(zones), len(var.categories)))
        for (zone, cat), value in cells[var.name].items():
            counts[zone_index[zone], var.index(cat)] = value
        tables.append(ConstraintTable(var.name, tuple(zones), var.categories, counts))
    return tables


def save_constraints(tables, path):
    """Inverse of load_constraints (full-precision counts, round-trip safe)."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["zone_id", "variable", "category", "count"])
        for t in tables:
            for zi, zone in enumerate(t.zones):
                for ci, cat in enumerate(t.categories):
                    writer.writerow(
                        [zone, t.variable, cat, repr(float(t.counts[zi, ci]))]
                    )


# --------------------------------------------------------------------------
# Survey microdata
# --------------------------------------------------------------------------

def load_survey(path, schema: Schema) -> SurveyDataset:
    """Read wide per-individual CSV. Mandatory columns: record_id, the
    household field, one column per constraint/external variable, the income
    field (blank = missing) and every deprivation field (0/1). Remaining
    columns land in SurveyRecord.extras (numeric when they parse)."""
    path = Path(path)
    var_names = [v.name for v in schema.constraint_vars + schema.external_vars]
    mandatory = (
        ["record_id", schema.household_field]
        + var_names
        + [schema.income_field]
        + list(schema.deprivation_fields)
    )

    records = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in mandatory if c not in (reader.fieldnames or [])]
        if missing:
            raise IngestError(f"{path}: missing mandatory columns {missing}")
        known = set(mandatory)
        extra_cols = [c for c in reader.fieldnames if c not in known]
        for lineno, row in enumerate(reader, start=2):
            cats = {}
            for name in var_names:
                cats[name] = row[name]
            vardefs = {v.name: v for v in schema.constraint_vars}
            for name, cat in cats.items():
                if name in vardefs and cat not in vardefs[name].categories:
                    raise IngestError(
                        f"{path}: line {lineno}: category {cat!r} not in "
                        f"schema for {name!r}"
                    )
            raw_income = row[schema.income_field].strip()
            if raw_income == "":
                income = None
            else:
                try:
                    income = float(raw_income)
                except ValueError:
                    raise IngestError(
                        f"{path}: line {lineno}: bad income {raw_income!r}"
                    ) from None
                if income < 0 or not math.isfinite(income):
                    raise IngestError(
                        f"{path}: line {lineno}: income must be >= 0 and finite"
                    )
            deps = []
            for f in schema.deprivation_fields:
                v = row[f].strip()
                if v not in ("0", "1"):
                    raise IngestError(
                        f"{path}: line {lineno}: deprivation field {f!r} "
                        "must be 0/1"
                    )
                deps.append(v == "1")
            extras = {}
            for c in extra_cols:
                v = row[c]
                if v is None or v.strip() == "":
                    extras[c] = None
                    continue
                try:
                    extras[c] = float(v)
                except ValueError:
                    extras[c] = v
            records.append(
                SurveyRecord(
                    record_id=row["record_id"],
                    household_id=row[schema.household_field],
                    categories=cats,
                    income=income,
                    deprivations=tuple(deps),
                    extras=extras,
                )
            )
    return SurveyDataset(records, schema)


# --------------------------------------------------------------------------
# Crosswalks and external reference tables
# --------------------------------------------------------------------------

def load_crosswalks(path):
    """Read `variable,fine_category,group_category`; one Crosswalk per
    variable appearing in the file, keyed by variable name."""
    path = Path(path)
    maps: dict[str, dict] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["variable", "fine_category", "group_category"]:
            raise IngestError(
                f"{path}: expected header 'variable,fine_category,group_category'"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise IngestError(f"{path}: line {lineno}: expected 3 fields")
            var, fine, group = row
            m = maps.setdefault(var, {})
            if fine in m and m[fine] != group:
                raise IngestError(
                    f"{path}: line {lineno}: {fine!r} mapped to both "
                    f"{m[fine]!r} and {group!r}"
                )
            m[fine] = group
    return {var: Crosswalk(var, m) for var, m in maps.items()}


def load_external_actual(path):
    """Read a long-format actual table for one external variable into
    (variable, zones, categories, counts ndarray). Layout as constraints.csv;
    exactly one variable per file."""
    path = Path(path)
    zones: list[str] = []
    cats: list[str] = []
    cells = {}
    variable = None
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["zone_id", "variable", "category", "count"]:
            raise IngestError(
                f"{path}: expected header 'zone_id,variable,category,count'"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            zone, var, cat, raw = row
            if variable is None:
                variable = var
            elif var != variable:
                raise IngestError(
                    f"{path}: line {lineno}: mixed variables {variable!r}/{var!r}"
                )
            try:
                count = float(raw)
            except ValueError:
                raise IngestError(
                    f"{path}: non-numeric count at line {lineno}"
                ) from None
            if count < 0 or not math.isfinite(count):
                raise IngestError(f"{path}: invalid count at line {lineno}")
            if zone not in zones:
                zones.append(zone)
            if cat not in cats:
                cats.append(cat)
            cells[(zone, cat)] = count
    if variable is None:
        raise IngestError(f"{path}: empty external table")
    counts = np.zeros((len(zones), len(cats)))
    for (zone, cat), v in cells.items():
        counts[zones.index(zone), cats.index(cat)] = v
    return variable, tuple(zones), tuple(cats), counts


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------

_KNOWN_TOP = {"schema", "paths", "ipf", "seed", "equivalize", "poverty"}


def _warn_unknown(mapping, known, context):
    for key in mapping:
        if key not in known:
            log.warning("ignoring unknown config key %s.%s", context, key)


def load_config(path) -> PipelineConfig:
    """Parse the YAML configuration into a fully defaulted PipelineConfig.
    Unknown keys warn; invalid values raise IngestError."""
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise IngestError(f"{path}: configuration must be a mapping")
    _warn_unknown(raw, _KNOWN_TOP, "")

    try:
        schema = _parse_schema(raw.get("schema") or {})
        paths = raw.get("paths") or {}
        _warn_unknown(
            paths,
            {"constraints", "survey", "output_dir", "external_actual", "crosswalk"},
            "paths",
        )
        for key in ("constraints", "survey", "output_dir"):
            if key not in paths:
                raise IngestError(f"paths.{key} is required")
        base = path.parent

        def resolve(p):
            p = Path(p)
            return p if p.is_absolute() else base / p

        ipf_cfg = raw.get("ipf") or {}
        _warn_unknown(ipf_cfg, {"max_iterations", "tolerance"}, "ipf")
        pov = raw.get("poverty") or {}
        _warn_unknown(pov, {"arop_fraction", "md_threshold", "mpi"}, "poverty")
        mpi_spec = _parse_mpi(pov.get("mpi")) if pov.get("mpi") else None

        return PipelineConfig(
            schema=schema,
            constraints_path=resolve(paths["constraints"]),
            survey_path=resolve(paths["survey"]),
            output_dir=resolve(paths["output_dir"]),
            external_actual_path=(
                resolve(paths["external_actual"])
                if "external_actual" in paths
                else None
            ),
            crosswalk_path=(
                resolve(paths["crosswalk"]) if "crosswalk" in paths else None
            ),
            max_iterations=int(ipf_cfg.get("max_iterations", 100)),
            tolerance=float(ipf_cfg.get("tolerance", 1e-6)),
            seed=int(raw.get("seed", 0)),
            equivalize=bool(raw.get("equivalize", False)),
            arop_fraction=float(pov.get("arop_fraction", 0.6)),
            md_threshold=int(pov.get("md_threshold", 3)),
            mpi_spec=mpi_spec,
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, IngestError):
            raise
        raise IngestError(f"{path}: {exc}") from exc


def _parse_schema(raw) -> Schema:
    _warn_unknown(
        raw,
        {
            "constraint_variables",
            "external_variables",
            "income_field",
            "household_field",
            "deprivation_fields",
        },
        "schema",
    )
    if "constraint_variables" not in raw:
        raise IngestError("schema.constraint_variables is required")

    def vardefs(items):
        out = []
        for item in items:
            out.append(VariableDef(item["name"], tuple(item["categories"])))
        return tuple(out)

    try:
        return Schema(
            constraint_vars=vardefs(raw["constraint_variables"]),
            external_vars=vardefs(raw.get("external_variables", [])),
            income_field=raw.get("income_field", "income"),
            deprivation_fields=tuple(raw.get("deprivation_fields", [])),
            household_field=raw.get("household_field", "household_id"),
        )
    except (KeyError, SchemaError) as exc:
        raise IngestError(f"bad schema section: {exc}") from exc


def _parse_mpi(raw) -> MpiSpec:
    _warn_unknown(raw, {"cutoff", "dimensions"}, "poverty.mpi")
    dims = []
    raw_dims = raw.get("dimensions") or []
    for d in raw_dims:
        inds = []
        for i in d.get("indicators", []):
            if "below" in i:
                inds.append(
                    MpiIndicator(
                        i["field"],
                        kind="below",
                        threshold=float(i["below"]),
                        weight=i.get("weight"),
                    )
                )
            elif "in" in i:
                inds.append(
                    MpiIndicator(
                        i["field"],
                        kind="in",
                        values=tuple(i["in"]),
                        weight=i.get("weight"),
                    )
                )
            else:
                inds.append(MpiIndicator(i["field"], weight=i.get("weight")))
        weight = d.get("weight", 1.0 / len(raw_dims))
        dims.append(MpiDimension(d["name"], float(weight), tuple(inds)))
    try:
        return MpiSpec(tuple(dims), cutoff=float(raw.get("cutoff", 1.0 / 3.0)))
    except SchemaError as exc:
        raise IngestError(f"bad poverty.mpi section: {exc}") from exc
