"""Shared data model: constraint variables, census tables, survey microdata.

Everything here is immutable after construction and safe to share across
threads. Zone ids and category labels are case-sensitive exact strings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class SchemaError(ValueError):
    """Structural problem in the data model (unknown variable, bad counts, ...)."""


@dataclass(frozen=True)
class VariableDef:
    """A categorical variable with an ordered category list."""

    name: str
    categories: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "categories", tuple(self.categories))
        if len(self.categories) < 2:
            raise SchemaError(f"variable {self.name!r} needs >= 2 categories")
        if any(not c for c in self.categories):
            raise SchemaError(f"variable {self.name!r} has an empty category label")
        if len(set(self.categories)) != len(self.categories):
            raise SchemaError(f"variable {self.name!r} has duplicate categories")

    def index(self, category: str) -> int:
        try:
            return self.categories.index(category)
        except ValueError:
            raise SchemaError(
                f"unknown category {category!r} for variable {self.name!r}"
            ) from None


@dataclass(frozen=True)
class Schema:
    """Declares the dataset pairing: constraint variables (in fitting order),
    external variables, the income field, deprivation item fields and the
    household id field."""

    constraint_vars: tuple[VariableDef, ...]
    external_vars: tuple[VariableDef, ...] = ()
    income_field: str = "income"
    deprivation_fields: tuple[str, ...] = ()
    household_field: str = "household_id"

    def __post_init__(self):
        object.__setattr__(self, "constraint_vars", tuple(self.constraint_vars))
        object.__setattr__(self, "external_vars", tuple(self.external_vars))
        object.__setattr__(self, "deprivation_fields", tuple(self.deprivation_fields))
        if not self.constraint_vars:
            raise SchemaError("at least one constraint variable is required")
        names = [v.name for v in self.constraint_vars] + [
            v.name for v in self.external_vars
        ]
        if len(set(names)) != len(names):
            raise SchemaError("variable names must be unique")

    def constraint_var(self, name: str) -> VariableDef:
        for v in self.constraint_vars:
            if v.name == name:
                return v
        raise SchemaError(f"unknown constraint variable {name!r}")

    def variable(self, name: str) -> VariableDef:
        for v in self.constraint_vars + self.external_vars:
            if v.name == name:
                return v
        raise SchemaError(f"unknown variable {name!r}")


@dataclass(frozen=True)
class ConstraintTable:
    """Zone x category census counts for one constraint variable."""

    variable: str
    zones: tuple[str, ...]
    categories: tuple[str, ...]
    counts: np.ndarray  # shape (n_zones, n_categories), float

    def __post_init__(self):
        object.__setattr__(self, "zones", tuple(self.zones))
        object.__setattr__(self, "categories", tuple(self.categories))
        counts = np.asarray(self.counts, dtype=float)
        if counts.shape != (len(self.zones), len(self.categories)):
            raise SchemaError(
                f"counts shape {counts.shape} does not match "
                f"{len(self.zones)} zones x {len(self.categories)} categories"
            )
        counts = counts.copy()
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)

    def zone_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def zone_row(self, zone_index: int) -> np.ndarray:
        return self.counts[zone_index]


@dataclass(frozen=True)
class SurveyRecord:
    """One survey individual: categorical attributes plus income and
    deprivation items. `extras` holds any additional numeric/string columns
    (e.g. household composition counts used for equivalization)."""

    record_id: str
    household_id: str
    categories: dict
    income: float | None = None
    deprivations: tuple[bool, ...] = ()
    extras: dict = field(default_factory=dict)


class SurveyDataset:
    """Survey microdata plus cached per-variable category code arrays."""

    def __init__(self, records, schema: Schema):
        self.records = tuple(records)
        self.schema = schema
        self.n = len(self.records)
        self._codes: dict[str, np.ndarray] = {}
        for rec in self.records:
            if not rec.household_id:
                raise SchemaError(f"record {rec.record_id!r} has empty household id")
            for var in schema.constraint_vars:
                cat = rec.categories.get(var.name)
                if cat not in var.categories:
                    raise SchemaError(
                        f"record {rec.record_id!r}: invalid category {cat!r} "
                        f"for constraint variable {var.name!r}"
                    )

    def category_codes(self, variable: str) -> np.ndarray:
        """Integer category index per record for `variable` (cached)."""
        if variable not in self._codes:
            vardef = self.schema.variable(variable)
            lut = {c: i for i, c in enumerate(vardef.categories)}
            try:
                codes = np.array(
                    [lut[r.categories[variable]] for r in self.records], dtype=np.intp
                )
            except KeyError as exc:
                raise SchemaError(
                    f"category {exc.args[0]!r} not declared for variable {variable!r}"
                ) from None
            self._codes[variable] = codes
        return self._codes[variable]

    def incomes(self) -> np.ndarray:
        """Income per record, NaN where missing."""
        return np.array(
            [math.nan if r.income is None else r.income for r in self.records],
            dtype=float,
        )

    def deprivation_matrix(self) -> np.ndarray:
        """Boolean matrix, records x deprivation items."""
        k = len(self.schema.deprivation_fields)
        out = np.zeros((self.n, k), dtype=bool)
        for i, r in enumerate(self.records):
            if len(r.deprivations) != k:
                raise SchemaError(
                    f"record {r.record_id!r} has {len(r.deprivations)} deprivation "
                    f"items, schema declares {k}"
                )
            out[i] = r.deprivations
        return out


@dataclass(frozen=True)
class ConsistencyReport:
    """Pre-pipeline hygiene summary for one (tables, survey) pairing."""

    zones: tuple[str, ...]
    variables: tuple[str, ...]
    zone_totals: dict  # variable -> np.ndarray of per-zone totals
    max_rel_disagreement: float
    disagreements: tuple  # (zone_id, variable, rel_disagreement) beyond tolerance
    empty_cells: tuple  # (variable, category) in census but absent from survey
    bad_cells: tuple  # (variable, zone_id, category, value) negative/non-finite

    # "consistent" threshold; larger disagreements are reported
    TOLERANCE = 1e-9
    # above this the pipeline refuses to proceed without an explicit override
    WARN_THRESHOLD = 0.05

    @property
    def clean(self) -> bool:
        return (
            self.max_rel_disagreement <= self.TOLERANCE
            and not self.empty_cells
            and not self.bad_cells
        )


def check_consistency(schema, tables, survey) -> ConsistencyReport:
    """Cross-check constraint tables against each other and the survey.

    Flags zone totals that disagree across variables, census categories with
    zero survey representation (IPF cannot populate them) and negative or
    non-finite counts. Structural mismatches raise SchemaError.
    """
    by_var = {t.variable: t for t in tables}
    for var in schema.constraint_vars:
        if var.name not in by_var:
            raise SchemaError(f"no constraint table for variable {var.name!r}")
        table = by_var[var.name]
        if table.categories != var.categories:
            raise SchemaError(
                f"table for {var.name!r} has categories {table.categories}, "
                f"schema declares {var.categories}"
            )
    zones = tables[0].zones
    for t in tables:
        if t.zones != zones:
            raise SchemaError(
                f"zone list mismatch: table {t.variable!r} differs from "
                f"{tables[0].variable!r}"
            )

    ref = by_var[schema.constraint_vars[0].name]
    ref_totals = ref.zone_totals()
    zone_totals = {}
    disagreements = []
    bad_cells = []
    max_rel = 0.0
    for var in schema.constraint_vars:
        t = by_var[var.name]
        totals = t.zone_totals()
        zone_totals[var.name] = totals
        bad = ~np.isfinite(t.counts) | (t.counts < 0)
        for zi, ci in zip(*np.nonzero(bad)):
            bad_cells.append((var.name, zones[zi], t.categories[ci], t.counts[zi, ci]))
        for zi, (tot, rtot) in enumerate(zip(totals, ref_totals)):
            if rtot > 0:
                rel = abs(tot - rtot) / rtot
            else:
                rel = 0.0 if tot == 0 else math.inf
            max_rel = max(max_rel, rel)
            if rel > ConsistencyReport.TOLERANCE:
                disagreements.append((zones[zi], var.name, rel))

    empty_cells = []
    for var in schema.constraint_vars:
        t = by_var[var.name]
        codes = survey.category_codes(var.name)
        present = np.bincount(codes, minlength=len(var.categories)) > 0
        census_mass = t.counts.sum(axis=0) > 0
        for ci in np.nonzero(census_mass & ~present)[0]:
            empty_cells.append((var.name, var.categories[ci]))

    return ConsistencyReport(
        zones=zones,
        variables=tuple(v.name for v in schema.constraint_vars),
        zone_totals=zone_totals,
        max_rel_disagreement=max_rel,
        disagreements=tuple(disagreements),
        empty_cells=tuple(empty_cells),
        bad_cells=tuple(bad_cells),
    )


def rescale_constraints(tables, reference_variable: str):
    """Scale every non-reference table's zone rows so each zone total equals
    the reference table's zone total. Within-row category proportions are
    preserved exactly (a single multiplicative factor per row)."""
    by_var = {t.variable: t for t in tables}
    if reference_variable not in by_var:
        raise SchemaError(f"reference variable {reference_variable!r} not in tables")
    ref_totals = by_var[reference_variable].zone_totals()

    out = []
    for t in tables:
        if t.variable == reference_variable:
            out.append(t)
            continue
        totals = t.zone_totals()
        counts = np.array(t.counts, dtype=float)
        for zi in range(len(t.zones)):
            if totals[zi] == 0:
                if ref_totals[zi] != 0:
                    raise SchemaError(
                        f"cannot rescale zone {t.zones[zi]!r} for variable "
                        f"{t.variable!r}: zero total vs reference {ref_totals[zi]}"
                    )
                continue  # all-zero row stays all-zero
            if ref_totals[zi] == 0:
                raise SchemaError(
                    f"cannot rescale zone {t.zones[zi]!r} for variable "
                    f"{t.variable!r}: reference total 0 with nonzero total {totals[zi]}"
                )
            counts[zi] *= ref_totals[zi] / totals[zi]
        out.append(ConstraintTable(t.variable, t.zones, t.categories, counts))
    return out
