"""Goodness-of-fit between synthetic aggregates and reference tables.

Internal validation compares zone-level synthetic counts of the constraint
variables against the census tables; external validation does the same for a
variable that was not used in fitting (optionally grouped via a crosswalk)
plus a metro-level share comparison. Metrics: coefficient of determination
(squared Pearson correlation), standard error about identity (an R²-style
statistic about the 45° line) and a pooled-variance two-tailed t-test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .ingest import Crosswalk
from .integerize import SyntheticPopulation
from .schema import SchemaError, SurveyDataset


@dataclass(frozen=True)
class AggregateTable:
    """Zone x category counts derived from a synthetic population."""

    variable: str
    zones: tuple[str, ...]
    categories: tuple[str, ...]
    counts: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "zones", tuple(self.zones))
        object.__setattr__(self, "categories", tuple(self.categories))
        c = np.asarray(self.counts, dtype=float).copy()
        c.flags.writeable = False
        object.__setattr__(self, "counts", c)

    def shares(self) -> np.ndarray:
        """Metro-level percentage share per category (sums to 100)."""
        totals = self.counts.sum(axis=0)
        return 100.0 * totals / totals.sum()


@dataclass(frozen=True)
class ValidationMetrics:
    r_squared: float
    sei: float
    t_stat: float
    p_value: float
    n_zones: int


@dataclass(frozen=True)
class ValidationReport:
    # rows of (variable, category, ValidationMetrics)
    metrics: tuple
    # rows of (variable, group, census_pct, simulated_pct, diff)
    shares: tuple
    # rows of (variable, zone_id, category, actual, simulated)
    scatter: tuple


# --------------------------------------------------------------------------
# Metrics
# --------------------------------------------------------------------------

def r_squared(actual, simulated) -> float:
    """Squared Pearson correlation between actual and simulated values.
    NaN when undefined (n < 3, or either vector constant)."""
    a = np.asarray(actual, dtype=float)
    s = np.asarray(simulated, dtype=float)
    if a.shape != s.shape:
        raise ValueError("vectors must have the same length")
    if a.size < 3 or np.ptp(a) == 0 or np.ptp(s) == 0:
        return math.nan
    da, ds = a - a.mean(), s - s.mean()
    r = float(da @ ds / math.sqrt((da @ da) * (ds @ ds)))
    return r * r


def sei(actual, simulated) -> float:
    """Standard error about identity:
    1 - sum((sim - act)^2) / sum((act - mean(act))^2).
    Equals 1 at perfect fit, penalizes deviations from the 45° line (unlike
    the regression-based R²) and can go negative for very poor fits. NaN when
    undefined (n < 3 or constant actual)."""
    a = np.asarray(actual, dtype=float)
    s = np.asarray(simulated, dtype=float)
    if a.shape != s.shape:
        raise ValueError("vectors must have the same length")
    if a.size < 3 or np.ptp(a) == 0:
        return math.nan
    sse = float(((s - a) ** 2).sum())
    sst = float(((a - a.mean()) ** 2).sum())
    return 1.0 - sse / sst


def student_t_two_tailed_p(t_stat: float, df: int) -> float:
    """Two-tailed Student-t tail probability via the regularized incomplete
    beta function: p = I_{df/(df+t²)}(df/2, 1/2)."""
    if df < 1:
        raise ValueError("df must be >= 1")
    if math.isinf(t_stat):
        return 0.0
    x = df / (df + t_stat * t_stat)
    return float(special.betainc(df / 2.0, 0.5, x))


def t_test_equal_variance(actual, simulated):
    """Pooled-variance two-sample two-tailed t-test treating the two vectors
    as independent samples of equal size n. Returns (t, p).

    Degenerate inputs: zero pooled variance with equal means gives (0, 1);
    with unequal means gives (signed inf, 0)."""
    a = np.asarray(actual, dtype=float)
    s = np.asarray(simulated, dtype=float)
    if a.shape != s.shape:
        raise ValueError("vectors must have the same length")
    n = a.size
    if n < 2:
        raise ValueError("need n >= 2")
    diff = s.mean() - a.mean()
    var_a = float(((a - a.mean()) ** 2).sum()) / (n - 1)
    var_s = float(((s - s.mean()) ** 2).sum()) / (n - 1)
    pooled = ((n - 1) * var_s + (n - 1) * var_a) / (2 * n - 2)
    df = 2 * n - 2
    if pooled == 0:
        if diff == 0:
            return 0.0, 1.0
        return math.copysign(math.inf, diff), 0.0
    t = diff / math.sqrt(pooled * 2.0 / n)
    return float(t), student_t_two_tailed_p(t, df)


def metrics_for(actual, simulated) -> ValidationMetrics:
    a = np.asarray(actual, dtype=float)
    t, p = t_test_equal_variance(a, simulated) if a.size >= 2 else (math.nan, math.nan)
    return ValidationMetrics(
        r_squared=r_squared(actual, simulated),
        sei=sei(actual, simulated),
        t_stat=t,
        p_value=p,
        n_zones=a.size,
    )


# --------------------------------------------------------------------------
# Aggregation and reports
# --------------------------------------------------------------------------

def aggregate(
    population: SyntheticPopulation,
    survey: SurveyDataset,
    variable: str,
    crosswalk: Crosswalk | None = None,
) -> AggregateTable:
    """Sum replication counts per zone per category of `variable`; with a
    crosswalk, fine categories are pooled into their groups."""
    vardef = survey.schema.variable(variable)
    codes = survey.category_codes(variable)
    if crosswalk is not None:
        groups = crosswalk.groups()
        gindex = {g: i for i, g in enumerate(groups)}
        cat_to_group = np.array(
            [gindex[crosswalk.group(c)] for c in vardef.categories], dtype=np.intp
        )
        codes = cat_to_group[codes]
        categories = groups
    else:
        categories = vardef.categories
    n_cats = len(categories)
    counts = np.zeros((len(population.zone_ids), n_cats))
    for zi in range(len(population.zone_ids)):
        counts[zi] = np.bincount(
            codes, weights=population.counts[:, zi], minlength=n_cats
        )
    return AggregateTable(variable, population.zone_ids, categories, counts)


def _share_rows(variable, categories, actual_totals, simulated_totals):
    act_pct = 100.0 * actual_totals / actual_totals.sum()
    sim_pct = 100.0 * simulated_totals / simulated_totals.sum()
    return tuple(
        (variable, cat, float(a), float(s), float(s - a))
        for cat, a, s in zip(categories, act_pct, sim_pct)
    )


def internal_validation(
    population: SyntheticPopulation, survey: SurveyDataset, tables
) -> ValidationReport:
    """Per constraint category across zones: R², SEI, t and p, plus
    metro-level shares and plot-ready scatter pairs."""
    metrics = []
    shares = []
    scatter = []
    for table in tables:
        sim = aggregate(population, survey, table.variable)
        if sim.zones != table.zones:
            raise SchemaError(
                f"zone mismatch between population and census table "
                f"{table.variable!r}"
            )
        for ci, cat in enumerate(table.categories):
            actual = table.counts[:, ci]
            simulated = sim.counts[:, ci]
            metrics.append((table.variable, cat, metrics_for(actual, simulated)))
            for zi, zone in enumerate(table.zones):
                scatter.append(
                    (table.variable, zone, cat, float(actual[zi]), float(simulated[zi]))
                )
        shares.extend(
            _share_rows(
                table.variable,
                table.categories,
                table.counts.sum(axis=0),
                sim.counts.sum(axis=0),
            )
        )
    return ValidationReport(tuple(metrics), tuple(shares), tuple(scatter))


def external_validation(
    population: SyntheticPopulation,
    survey: SurveyDataset,
    external_actual: AggregateTable,
    crosswalk: Crosswalk | None = None,
) -> ValidationReport:
    """Validate an unconstrained variable: metro-level share comparison
    always; per-group zone-level metrics and scatter pairs when the actual
    table is supplied at zone level (zone ids matching the population)."""
    sim = aggregate(population, survey, external_actual.variable, crosswalk)
    sim_by_cat = {c: sim.counts[:, i] for i, c in enumerate(sim.categories)}
    for cat in external_actual.categories:
        if cat not in sim_by_cat:
            raise SchemaError(
                f"external category {cat!r} not produced by the simulated "
                f"aggregate of {external_actual.variable!r}"
            )
    order = [sim.categories.index(c) for c in external_actual.categories]
    sim_counts = sim.counts[:, order]

    shares = _share_rows(
        external_actual.variable,
        external_actual.categories,
        external_actual.counts.sum(axis=0),
        sim_counts.sum(axis=0),
    )

    metrics = []
    scatter = []
    if len(external_actual.zones) > 1:
        if external_actual.zones != population.zone_ids:
            raise SchemaError(
                "zone id mismatch between external actual table and population"
            )
        for ci, cat in enumerate(external_actual.categories):
            actual = external_actual.counts[:, ci]
            simulated = sim_counts[:, ci]
            metrics.append(
                (external_actual.variable, cat, metrics_for(actual, simulated))
            )
            for zi, zone in enumerate(external_actual.zones):
                scatter.append(
                    (
                        external_actual.variable,
                        zone,
                        cat,
                        float(actual[zi]),
                        float(simulated[zi]),
                    )
                )
    return ValidationReport(tuple(metrics), tuple(shares), tuple(scatter))
