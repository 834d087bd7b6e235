"""Pipeline orchestration and report files.

Subcommands: check, synthesize, validate, indicators, pipeline, example.
Exit codes: 0 success, 1 hard error, 2 completed with warnings. All output
files are written atomically (temp file + rename) so no report is ever left
half-written.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import math
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .indicators import (
    arop_absolute,
    arop_relative,
    equivalized_incomes,
    income_summary,
    md_rate,
    mpi,
    percent_change,
)
from .ingest import (
    IngestError,
    PipelineConfig,
    load_config,
    load_constraints,
    load_crosswalks,
    load_external_actual,
    load_survey,
)
from .integerize import RngSpec, SyntheticPopulation, round_half_up, synthesize
from .ipf import ipf_all
from .schema import SchemaError, check_consistency, rescale_constraints
from .validate import AggregateTable, external_validation, internal_validation

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_WARNINGS = 2


# --------------------------------------------------------------------------
# File helpers
# --------------------------------------------------------------------------

def atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    atomic_write_text(path, buf.getvalue())


def _cell(v):
    if isinstance(v, float):
        if math.isnan(v):
            return ""
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# --------------------------------------------------------------------------
# Shared pipeline state
# --------------------------------------------------------------------------

class Runtime:
    """Loaded inputs plus lazily computed stages for one configuration."""

    def __init__(self, config: PipelineConfig, out_dir=None, seed=None):
        self.config = config
        self.out_dir = Path(out_dir) if out_dir else config.output_dir
        self.seed = config.seed if seed is None else int(seed)
        self.schema = config.schema
        self.tables = load_constraints(config.constraints_path, self.schema)
        self.survey = load_survey(config.survey_path, self.schema)
        self.timings: dict[str, float] = {}
        self.warnings: list[str] = []

    def timed(self, stage, fn):
        t0 = time.perf_counter()
        result = fn()
        self.timings[stage] = time.perf_counter() - t0
        return result

    def population_path(self) -> Path:
        return self.out_dir / "population.csv"

    def load_population(self) -> SyntheticPopulation:
        path = self.population_path()
        if not path.exists():
            raise IngestError(f"{path}: population file not found (run synthesize)")
        zone_index = {z: i for i, z in enumerate(self.tables[0].zones)}
        record_index = {r.record_id: i for i, r in enumerate(self.survey.records)}
        counts = np.zeros((self.survey.n, len(zone_index)), dtype=np.int64)
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["zone_id", "record_id", "count"]:
                raise IngestError(f"{path}: unexpected header {header}")
            for lineno, row in enumerate(reader, start=2):
                zone, rid, raw = row
                if zone not in zone_index or rid not in record_index:
                    raise IngestError(
                        f"{path}: line {lineno}: unknown zone or record id"
                    )
                counts[record_index[rid], zone_index[zone]] = int(raw)
        return SyntheticPopulation(
            counts=counts,
            zone_ids=self.tables[0].zones,
            record_ids=tuple(r.record_id for r in self.survey.records),
        )


# --------------------------------------------------------------------------
# check
# --------------------------------------------------------------------------

def run_check(rt: Runtime, allow_inconsistent: bool = False) -> int:
    report = rt.timed(
        "check", lambda: check_consistency(rt.schema, rt.tables, rt.survey)
    )
    rows = []
    for zone, var, rel in report.disagreements:
        rows.append(("zone_total_disagreement", zone, var, "", repr(rel)))
    for var, cat in report.empty_cells:
        rows.append(("empty_census_cell", "", var, cat, ""))
    for var, zone, cat, value in report.bad_cells:
        rows.append(("bad_count", zone, var, cat, repr(value)))
    write_csv(
        rt.out_dir / "consistency_report.csv",
        ["issue", "zone_id", "variable", "category", "value"],
        rows,
    )

    print(
        f"consistency: max zone-total disagreement "
        f"{report.max_rel_disagreement:.3g} across "
        f"{len(report.variables)} constraint tables, {len(report.zones)} zones"
    )
    if report.empty_cells:
        print(f"  {len(report.empty_cells)} census categories without survey support:")
        for var, cat in report.empty_cells:
            print(f"    ({var}, {cat})")
    if report.bad_cells:
        print(f"  {len(report.bad_cells)} negative/non-finite counts")

    if report.max_rel_disagreement > report.WARN_THRESHOLD and not allow_inconsistent:
        print(
            "error: constraint totals disagree by more than "
            f"{report.WARN_THRESHOLD:.0%}; rerun with --allow-inconsistent "
            "to proceed anyway",
            file=sys.stderr,
        )
        return EXIT_ERROR
    if not report.clean:
        rt.warnings.append("consistency issues reported")
        return EXIT_WARNINGS
    return EXIT_OK


# --------------------------------------------------------------------------
# synthesize
# --------------------------------------------------------------------------

def run_synthesize(rt: Runtime, dump_weights=False, strict=False, max_iters=None):
    cfg = rt.config
    reference = rt.schema.constraint_vars[0].name
    tables = rescale_constraints(rt.tables, reference)
    matrix, convergence = rt.timed(
        "ipf",
        lambda: ipf_all(
            rt.survey,
            tables,
            max_iterations=max_iters or cfg.max_iterations,
            tolerance=cfg.tolerance,
        ),
    )
    ref_table = next(t for t in tables if t.variable == reference)
    zone_pops = round_half_up(ref_table.zone_totals())
    population = rt.timed(
        "trs", lambda: synthesize(matrix, zone_pops, rt.seed)
    )

    write_csv(
        rt.out_dir / "convergence.csv",
        ["zone_id", "iterations", "tae", "rel_tae", "converged"],
        [
            (z.zone_id, z.iterations, z.tae, z.rel_tae, int(z.converged))
            for z in convergence.zones
        ],
    )
    rows = []
    for zi, zone in enumerate(population.zone_ids):
        col = population.counts[:, zi]
        for ri in np.flatnonzero(col):
            rows.append((zone, population.record_ids[ri], int(col[ri])))
    write_csv(rt.population_path(), ["zone_id", "record_id", "count"], rows)
    if dump_weights:
        wrows = []
        for zi, zone in enumerate(matrix.zone_ids):
            for ri, rid in enumerate(matrix.record_ids):
                wrows.append((rid, zone, matrix.weights[ri, zi]))
        write_csv(rt.out_dir / "weights.csv", ["record_id", "zone_id", "weight"], wrows)

    n_bad = sum(1 for z in convergence.zones if not z.converged)
    print(
        f"synthesized {len(population.zone_ids)} zones, "
        f"{int(population.counts.sum())} persons; "
        f"{len(convergence.zones) - n_bad}/{len(convergence.zones)} zones "
        f"converged (max relative TAE {convergence.max_rel_tae:.3g})"
    )
    code = EXIT_OK
    if n_bad:
        rt.warnings.append(f"{n_bad} zones did not converge")
        code = EXIT_ERROR if strict else EXIT_WARNINGS
    return population, convergence, code


# --------------------------------------------------------------------------
# validate
# --------------------------------------------------------------------------

def run_validate(rt: Runtime, population: SyntheticPopulation) -> int:
    report = rt.timed(
        "validate_internal",
        lambda: internal_validation(population, rt.survey, rt.tables),
    )
    metric_rows = [
        (var, cat, m.r_squared, m.sei, m.t_stat, m.p_value)
        for var, cat, m in report.metrics
    ]
    share_rows = list(report.shares)
    scatter = {}
    for var, zone, cat, actual, simulated in report.scatter:
        scatter.setdefault(var, []).append((zone, cat, actual, simulated))

    cfg = rt.config
    if cfg.external_actual_path is not None:
        variable, zones, cats, counts = load_external_actual(cfg.external_actual_path)
        actual = AggregateTable(variable, zones, cats, counts)
        crosswalk = None
        if cfg.crosswalk_path is not None:
            crosswalk = load_crosswalks(cfg.crosswalk_path).get(variable)
        ext = rt.timed(
            "validate_external",
            lambda: external_validation(population, rt.survey, actual, crosswalk),
        )
        metric_rows += [
            (var, cat, m.r_squared, m.sei, m.t_stat, m.p_value)
            for var, cat, m in ext.metrics
        ]
        share_rows += list(ext.shares)
        for var, zone, cat, a, s in ext.scatter:
            scatter.setdefault(var, []).append((zone, cat, a, s))

    write_csv(
        rt.out_dir / "validation_internal.csv",
        ["variable", "category", "r2", "sei", "t", "p"],
        metric_rows,
    )
    write_csv(
        rt.out_dir / "validation_shares.csv",
        ["variable", "group", "census_pct", "simulated_pct", "diff"],
        share_rows,
    )
    for var, rows in scatter.items():
        write_csv(
            rt.out_dir / f"scatter_{var}.csv",
            ["zone_id", "category", "actual", "simulated"],
            rows,
        )

    defined = [m for _, _, m in report.metrics if not math.isnan(m.r_squared)]
    if defined:
        print(
            f"internal validation over {len(defined)} categories: "
            f"min R2 {min(m.r_squared for m in defined):.3f}, "
            f"min SEI {min(m.sei for m in defined):.3f}, "
            f"{sum(1 for m in defined if m.p_value < 0.05)} with p < 0.05"
        )
    return EXIT_OK


# --------------------------------------------------------------------------
# indicators
# --------------------------------------------------------------------------

INDICATOR_COLUMNS = [
    "zone_id",
    "mean_income",
    "median_income",
    "arop_abs",
    "arop_rel",
    "md_rate",
    "mpi_h",
    "mpi_a",
    "mpi_m0",
    "excluded_missing_income",
]


def run_indicators(rt: Runtime, population: SyntheticPopulation, compare=None) -> int:
    cfg = rt.config
    counts = population.counts
    incomes = equivalized_incomes(rt.survey, cfg.equivalize)

    def compute():
        means, medians, metro_mean, metro_median = income_summary(counts, incomes)
        abs_rates, _, excluded = arop_absolute(counts, incomes, cfg.arop_fraction)
        rel_rates, _ = arop_relative(counts, incomes, cfg.arop_fraction)
        if rt.schema.deprivation_fields:
            md = md_rate(counts, rt.survey.deprivation_matrix(), cfg.md_threshold)
        else:
            md = np.full(len(population.zone_ids), math.nan)
        if cfg.mpi_spec is not None:
            per_zone, metro = mpi(counts, rt.survey, cfg.mpi_spec)
        else:
            nanres = [None] * len(population.zone_ids)
            per_zone, metro = nanres, None
        rows = []
        for zi, zone in enumerate(population.zone_ids):
            z = per_zone[zi]
            rows.append(
                (
                    zone,
                    means[zi],
                    medians[zi],
                    abs_rates[zi],
                    rel_rates[zi],
                    md[zi],
                    z.headcount if z else math.nan,
                    z.intensity if z else math.nan,
                    z.adjusted if z else math.nan,
                    int(excluded[zi]),
                )
            )
        pooled = counts.sum(axis=1, keepdims=True)
        metro_abs, _, metro_excl = arop_absolute(pooled, incomes, cfg.arop_fraction)
        metro_rel, _ = arop_relative(pooled, incomes, cfg.arop_fraction)
        if rt.schema.deprivation_fields:
            metro_md = md_rate(pooled, rt.survey.deprivation_matrix(), cfg.md_threshold)
        else:
            metro_md = [math.nan]
        rows.append(
            (
                "METRO",
                metro_mean,
                metro_median,
                metro_abs[0],
                metro_rel[0],
                metro_md[0],
                metro.headcount if metro else math.nan,
                metro.intensity if metro else math.nan,
                metro.adjusted if metro else math.nan,
                int(metro_excl[0]),
            )
        )
        return rows

    rows = rt.timed("indicators", compute)
    write_csv(rt.out_dir / "indicators.csv", INDICATOR_COLUMNS, rows)

    if compare is not None:
        earlier = _read_indicator_csv(Path(compare) / "indicators.csv")
        diff_rows = []
        for row in rows:
            zone = row[0]
            if zone not in earlier:
                continue
            for mi, metric in enumerate(INDICATOR_COLUMNS[1:-1], start=1):
                before = earlier[zone].get(metric)
                after = row[mi]
                if before is None or before <= 0 or math.isnan(after):
                    continue
                diff_rows.append(
                    (zone, metric, before, after, percent_change(before, after))
                )
        write_csv(
            rt.out_dir / "indicators_diff.csv",
            ["zone_id", "metric", "earlier", "later", "pct_change"],
            diff_rows,
        )

    metro = rows[-1]
    print(
        f"indicators for {len(rows) - 1} zones; metro mean income "
        f"{metro[1]:.2f}, AROP(abs) {metro[3]:.3f}, MD {metro[5]:.3f}"
        if not math.isnan(metro[1])
        else "indicators written"
    )
    return EXIT_OK


def _read_indicator_csv(path: Path):
    if not path.exists():
        raise IngestError(f"{path}: comparison indicators file not found")
    out = {}
    with path.open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out[row["zone_id"]] = {
                k: (float(v) if v not in ("", None) else None)
                for k, v in row.items()
                if k != "zone_id"
            }
    return out


# --------------------------------------------------------------------------
# manifest
# --------------------------------------------------------------------------

def write_manifest(rt: Runtime, convergence=None) -> None:
    cfg = rt.config
    lines = [
        f"engine_version={__version__}",
        f"seed={rt.seed}",
        f"rng={RngSpec.generator}",
        f"ipf.max_iterations={cfg.max_iterations}",
        f"ipf.tolerance={cfg.tolerance!r}",
        f"poverty.arop_fraction={cfg.arop_fraction!r}",
        f"poverty.md_threshold={cfg.md_threshold}",
        f"equivalize={cfg.equivalize}",
    ]
    for label, path in (
        ("constraints", cfg.constraints_path),
        ("survey", cfg.survey_path),
        ("external_actual", cfg.external_actual_path),
        ("crosswalk", cfg.crosswalk_path),
    ):
        if path is not None and Path(path).exists():
            lines.append(f"input.{label}.sha256={sha256_file(Path(path))}")
    if convergence is not None:
        n_ok = sum(1 for z in convergence.zones if z.converged)
        lines.append(f"convergence.zones_converged={n_ok}/{len(convergence.zones)}")
        lines.append(f"convergence.max_rel_tae={convergence.max_rel_tae!r}")
    for name in sorted(p.name for p in rt.out_dir.glob("*.csv")):
        lines.append(f"output.{name}.sha256={sha256_file(rt.out_dir / name)}")
    for stage, seconds in rt.timings.items():
        lines.append(f"timing.{stage}_seconds={seconds:.3f}")
    atomic_write_text(rt.out_dir / "manifest.txt", "\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smallarea",
        description="Small-area population synthesis and poverty indicators",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="YAML configuration path")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--seed", type=int, help="RNG seed (overrides config)")
        p.add_argument(
            "--allow-inconsistent",
            action="store_true",
            help="proceed despite large constraint-total disagreement",
        )
        p.add_argument(
            "--strict",
            action="store_true",
            help="treat non-convergence as a hard error",
        )

    common(sub.add_parser("check", help="consistency checks only"))
    p = sub.add_parser("synthesize", help="IPF + TRS, write the population")
    common(p)
    p.add_argument("--dump-weights", action="store_true")
    p.add_argument("--max-iters", type=int, help="cap IPF sweeps")
    common(sub.add_parser("validate", help="validation reports for a population"))
    p = sub.add_parser("indicators", help="income and poverty indicators")
    common(p)
    p.add_argument("--compare", help="earlier run directory for percent changes")
    p = sub.add_parser("pipeline", help="check + synthesize + validate + indicators")
    common(p)
    p.add_argument("--dump-weights", action="store_true")
    p.add_argument("--max-iters", type=int)
    p.add_argument("--compare", help="earlier run directory for percent changes")

    p = sub.add_parser("example", help="write the bundled synthetic example dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=20160802)
    p.add_argument("--zones", type=int, default=59)
    p.add_argument("--survey-size", type=int, default=3000)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "example":
            from .fixture import generate_example

            config_path = generate_example(
                args.out,
                seed=args.seed,
                n_zones=args.zones,
                survey_size=args.survey_size,
            )
            print(f"example written; run: smallarea pipeline --config {config_path}")
            return EXIT_OK

        rt = Runtime(load_config(args.config), out_dir=args.out, seed=args.seed)
        rt.out_dir.mkdir(parents=True, exist_ok=True)

        if args.command == "check":
            return run_check(rt, args.allow_inconsistent)

        code = run_check(rt, args.allow_inconsistent)
        if code == EXIT_ERROR:
            return code

        if args.command == "synthesize":
            _, convergence, scode = run_synthesize(
                rt, args.dump_weights, args.strict, args.max_iters
            )
            write_manifest(rt, convergence)
            return max(code, scode) if scode != EXIT_ERROR else EXIT_ERROR

        if args.command == "validate":
            population = rt.load_population()
            vcode = run_validate(rt, population)
            return max(code, vcode)

        if args.command == "indicators":
            population = rt.load_population()
            icode = run_indicators(rt, population, compare=args.compare)
            return max(code, icode)

        # pipeline
        population, convergence, scode = run_synthesize(
            rt, args.dump_weights, args.strict, args.max_iters
        )
        if scode == EXIT_ERROR:
            return EXIT_ERROR
        run_validate(rt, population)
        run_indicators(rt, population, compare=args.compare)
        write_manifest(rt, convergence)
        return max(code, scode)
    except (IngestError, SchemaError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
