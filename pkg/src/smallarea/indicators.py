"""Zone-level income statistics and poverty measures.

Operates on a synthetic population (integer replication counts per survey
record per zone): equivalized income summaries, at-risk-of-poverty rates
under a metro-wide ("spatially absolute") or per-zone ("spatially relative")
poverty line, material deprivation rates, and the adjusted headcount ratio
M0 = H * A with its components.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .schema import Schema, SchemaError, SurveyDataset


# --------------------------------------------------------------------------
# Multidimensional poverty specification
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MpiIndicator:
    """One deprivation indicator.

    kind:
      "flag"  - boolean field (a deprivation item or a 0/1 extra column)
      "below" - numeric field, deprived when value < threshold
      "in"    - categorical variable, deprived when category in `values`
    """

    field: str
    kind: str = "flag"
    threshold: float | None = None
    values: tuple[str, ...] = ()
    weight: float | None = None  # share of the dimension weight; default equal

    def __post_init__(self):
        if self.kind not in ("flag", "below", "in"):
            raise SchemaError(f"unknown indicator kind {self.kind!r}")
        if self.kind == "below" and self.threshold is None:
            raise SchemaError(f"indicator {self.field!r}: 'below' needs a threshold")
        if self.kind == "in" and not self.values:
            raise SchemaError(f"indicator {self.field!r}: 'in' needs category values")
        object.__setattr__(self, "values", tuple(self.values))


@dataclass(frozen=True)
class MpiDimension:
    name: str
    weight: float
    indicators: tuple[MpiIndicator, ...]

    def __post_init__(self):
        object.__setattr__(self, "indicators", tuple(self.indicators))
        if not self.indicators:
            raise SchemaError(f"dimension {self.name!r} has no indicators")

    def indicator_weights(self) -> list[float]:
        explicit = [i.weight for i in self.indicators]
        if all(w is None for w in explicit):
            return [self.weight / len(self.indicators)] * len(self.indicators)
        if any(w is None for w in explicit):
            raise SchemaError(
                f"dimension {self.name!r}: give all indicator weights or none"
            )
        total = sum(explicit)
        if not math.isclose(total, 1.0, abs_tol=1e-9):
            raise SchemaError(
                f"dimension {self.name!r}: indicator weight shares sum to {total}, "
                "expected 1"
            )
        return [self.weight * w for w in explicit]


@dataclass(frozen=True)
class MpiSpec:
    dimensions: tuple[MpiDimension, ...]
    cutoff: float = 1.0 / 3.0

    def __post_init__(self):
        object.__setattr__(self, "dimensions", tuple(self.dimensions))
        total = sum(d.weight for d in self.dimensions)
        if abs(total - 1.0) > 1e-9:
            raise SchemaError(f"dimension weights sum to {total}, expected 1")
        if not (0 < self.cutoff <= 1):
            raise SchemaError(f"cutoff must be in (0, 1], got {self.cutoff}")


@dataclass(frozen=True)
class MpiResult:
    headcount: float  # H, share of persons whose score meets the cutoff
    intensity: float  # A, mean censored score among those persons (0 if none)
    adjusted: float  # M0 = H * A


# --------------------------------------------------------------------------
# Elementary operations
# --------------------------------------------------------------------------

def equivalize(household_income: float, n_adults: int, n_children: int = 0) -> float:
    """Equivalized income on the modified-OECD scale:
    income / (1 + 0.5*(n_adults - 1) + 0.3*n_children)."""
    if n_adults < 1:
        raise ValueError("household needs at least one adult")
    if n_children < 0:
        raise ValueError("negative child count")
    if not math.isfinite(household_income):
        raise ValueError("income must be finite")
    return household_income / (1.0 + 0.5 * (n_adults - 1) + 0.3 * n_children)


def weighted_median(values, counts) -> float:
    """Weighted median with a fixed boundary convention: the smallest value
    whose cumulative count reaches half the total; when the half-total falls
    exactly on the boundary between two distinct values, their mean."""
    values = np.asarray(values, dtype=float)
    counts = np.asarray(counts, dtype=float)
    keep = counts > 0
    values, counts = values[keep], counts[keep]
    if values.size == 0:
        raise ValueError("empty population")
    uniq, inv = np.unique(values, return_inverse=True)
    agg = np.zeros(uniq.size)
    np.add.at(agg, inv, counts)
    cum = np.cumsum(agg)
    half = cum[-1] / 2.0
    i = int(np.searchsorted(cum, half, side="left"))
    if cum[i] == half and i + 1 < uniq.size:
        return (uniq[i] + uniq[i + 1]) / 2.0
    return uniq[i]


def percent_change(earlier: float, later: float) -> float:
    """100 * (later - earlier) / earlier; earlier must be positive."""
    if not earlier > 0:
        raise ValueError(f"earlier value must be > 0, got {earlier}")
    return 100.0 * (later - earlier) / earlier


# --------------------------------------------------------------------------
# Population-level measures
# --------------------------------------------------------------------------

def equivalized_incomes(survey: SurveyDataset, do_equivalize: bool) -> np.ndarray:
    """Per-record equivalized income vector (NaN for missing incomes).

    When `do_equivalize`, the survey's income field is read as household
    income and divided by the modified-OECD scale built from the `n_adults`
    and `n_children` extra columns; otherwise the field is used verbatim as
    already-equivalized income.
    """
    raw = survey.incomes()
    if not do_equivalize:
        return raw
    out = np.empty_like(raw)
    for i, rec in enumerate(survey.records):
        if math.isnan(raw[i]):
            out[i] = math.nan
            continue
        try:
            n_adults = int(rec.extras["n_adults"])
            n_children = int(rec.extras.get("n_children", 0))
        except (KeyError, TypeError, ValueError):
            raise SchemaError(
                f"record {rec.record_id!r}: equivalization needs integer "
                "'n_adults'/'n_children' columns"
            ) from None
        out[i] = equivalize(raw[i], n_adults, n_children)
    return out


def _zone_rate(counts_col, below_mask, valid_mask):
    """Weighted share of `below_mask` among valid records; NaN when the zone
    has no counted valid person."""
    denom = counts_col[valid_mask].sum()
    if denom == 0:
        return math.nan
    return counts_col[valid_mask & below_mask].sum() / denom


def arop_absolute(counts: np.ndarray, incomes: np.ndarray, fraction: float = 0.6):
    """AROP with a single metro-wide line: fraction * pooled weighted median.

    Records with missing income are excluded from both numerator and
    denominator. Returns (per-zone rates, poverty line, per-zone excluded
    counts)."""
    valid = ~np.isnan(incomes)
    pooled = counts.sum(axis=1)
    if pooled[valid].sum() == 0:
        raise ValueError("no counted person with observed income")
    line = fraction * weighted_median(incomes[valid], pooled[valid])
    below = np.zeros_like(valid)
    below[valid] = incomes[valid] < line
    rates = np.array(
        [_zone_rate(counts[:, z], below, valid) for z in range(counts.shape[1])]
    )
    excluded = counts[~valid].sum(axis=0)
    return rates, line, excluded


def arop_relative(counts: np.ndarray, incomes: np.ndarray, fraction: float = 0.6):
    """AROP with per-zone lines: fraction * each zone's weighted median.

    Returns (per-zone rates, per-zone lines); both NaN for zones with no
    counted person with observed income."""
    valid = ~np.isnan(incomes)
    n_zones = counts.shape[1]
    rates = np.full(n_zones, math.nan)
    lines = np.full(n_zones, math.nan)
    for z in range(n_zones):
        col = counts[:, z]
        if col[valid].sum() == 0:
            continue
        line = fraction * weighted_median(incomes[valid], col[valid])
        below = np.zeros_like(valid)
        below[valid] = incomes[valid] < line
        lines[z] = line
        rates[z] = _zone_rate(col, below, valid)
    return rates, lines


def md_rate(counts: np.ndarray, deprivations: np.ndarray, threshold: int = 3):
    """Material deprivation rate per zone: weighted share of persons lacking
    at least `threshold` of the listed items."""
    lacked = deprivations.sum(axis=1)
    deprived = lacked >= threshold
    totals = counts.sum(axis=0).astype(float)
    hit = counts[deprived].sum(axis=0)
    with np.errstate(invalid="ignore"):
        rates = np.where(totals > 0, hit / np.where(totals > 0, totals, 1), math.nan)
    return rates


def deprivation_scores(survey: SurveyDataset, spec: MpiSpec) -> np.ndarray:
    """Per-record weighted deprivation score c in [0, 1]."""
    score = np.zeros(survey.n)
    dep_fields = {f: i for i, f in enumerate(survey.schema.deprivation_fields)}
    dep_matrix = survey.deprivation_matrix() if dep_fields else None
    for dim in spec.dimensions:
        for ind, w in zip(dim.indicators, dim.indicator_weights()):
            if ind.kind == "in":
                vardef = survey.schema.variable(ind.field)
                codes = survey.category_codes(ind.field)
                sel = np.array([c in ind.values for c in vardef.categories])
                deprived = sel[codes]
            elif ind.kind == "below":
                vals = np.array(
                    [
                        _numeric_field(r, ind.field, survey.schema)
                        for r in survey.records
                    ]
                )
                # missing treated as not deprived
                deprived = np.nan_to_num(vals, nan=math.inf) < ind.threshold
            else:  # flag
                if ind.field in dep_fields:
                    deprived = dep_matrix[:, dep_fields[ind.field]]
                else:
                    deprived = np.array(
                        [bool(r.extras.get(ind.field, False)) for r in survey.records]
                    )
            score += w * deprived
    return score


def _numeric_field(rec, name, schema: Schema):
    if name == schema.income_field:
        return math.nan if rec.income is None else rec.income
    v = rec.extras.get(name)
    if v is None:
        return math.nan
    return float(v)


def mpi(counts: np.ndarray, survey: SurveyDataset, spec: MpiSpec):
    """Per-zone Alkire-Foster measures plus the pooled (metro) result.

    H = weighted share of persons with score >= cutoff, A = weighted mean
    score among them, M0 = H * A. Returns (list of per-zone MpiResult,
    metro MpiResult)."""
    score = deprivation_scores(survey, spec)
    # small slack so scores assembled from thirds compare equal to k = 1/3
    poor = score >= spec.cutoff - 1e-9

    def compute(col) -> MpiResult:
        total = col.sum()
        if total == 0:
            return MpiResult(math.nan, math.nan, math.nan)
        wp = col[poor].sum()
        h = wp / total
        a = float(score[poor] @ col[poor] / wp) if wp > 0 else 0.0
        return MpiResult(float(h), a, float(h * a))

    per_zone = [compute(counts[:, z].astype(float)) for z in range(counts.shape[1])]
    metro = compute(counts.sum(axis=1).astype(float))
    return per_zone, metro


def income_summary(counts: np.ndarray, incomes: np.ndarray):
    """Per-zone weighted mean and median of observed incomes, plus the metro
    row over pooled counts. Returns (means, medians, metro_mean, metro_median);
    empty zones yield NaN."""
    valid = ~np.isnan(incomes)
    n_zones = counts.shape[1]
    means = np.full(n_zones, math.nan)
    medians = np.full(n_zones, math.nan)
    for z in range(n_zones):
        col = counts[:, z]
        w = col[valid].astype(float)
        if w.sum() == 0:
            continue
        means[z] = incomes[valid] @ w / w.sum()
        medians[z] = weighted_median(incomes[valid], w)
    pooled = counts.sum(axis=1)[valid].astype(float)
    if pooled.sum() == 0:
        return means, medians, math.nan, math.nan
    metro_mean = incomes[valid] @ pooled / pooled.sum()
    metro_median = weighted_median(incomes[valid], pooled)
    return means, medians, metro_mean, metro_median
