"""Command-line interface: ``rmstpo analyze | simulate | calibrate | export``.

Exit codes: 0 success, 2 invalid input or usage, 3 estimation failure,
4 file I/O failure.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import yaml

from . import harness
from . import rng as rngmod
from .datafile import DELIMITERS, LoadedData, export_replicate, load_ovarian, load_sample, ovarian_data
from .errors import EstimationError, RMSTError, ValidationError
from .inference import run_all_methods
from .pseudo import Strata
from .results import ALL_METHODS, Method
from .simgen import (calibrate_scenario, crossing_points, expand_grid,
                     is_arm_estimable, load_registry, parse_cell, true_rmst)
from .survival import logrank_test

__all__ = ["main", "load_ovarian"]

EXIT_OK, EXIT_VALIDATION, EXIT_ESTIMATION, EXIT_IO = 0, 2, 3, 4
FULL_SCALE = {"n_sim": 5000, "b_resamples": 2000}
DESK_SCALE = {"n_sim": 1000, "b_resamples": 1000}
RESULT_COLUMNS = ("t_star", "method", "adjusted", "status", "estimate", "se", "statistic",
                  "p_value", "ci_low", "ci_high", "reject", "n_resamples", "seed")
CONFIG_KEYS = {"cells", "survival", "censoring", "deltas", "allocations", "multipliers",
               "t_star", "alpha", "n_sim", "b_resamples", "master_seed"}
CAVEAT = "# no adjustment for multiple testing is made across t_star values or methods"

ANALYZE_EPILOG = """\
input: delimited text with a header row (comma, tab or semicolon, detected
automatically). Columns are chosen with --time/--status/--group; status is
0 (censored) or 1 (event); the group column has exactly two levels, the
lower one being the control arm.

output (--output): one row per (t_star, method, adjusted) with columns
  t_star, method, adjusted, status, estimate, se, statistic, p_value,
  ci_low, ci_high, reject, n_resamples, seed
status is "ok", "inestimable" (an arm's RMST is undefined at t_star) or
"failed: <reason>".  Tab-separated if the file name ends in .tsv.
"""

SIMULATE_EPILOG = """\
config (--config): YAML mapping with any of
  cells: [MODEL,CENSORING,DELTA,N0:N1,K, ...]   explicit cells, or a grid from
  survival, censoring, deltas, allocations, multipliers
  t_star, alpha, n_sim, b_resamples, master_seed
Command-line flags override the file.  Without --cell or --config the full
factorial grid of the scenario registry is run at desk scale.

output (--output): results file with a registry fingerprint line, then
  scenario, censoring, delta, n0, n1, k, method, n_sim, b, rejection_rate,
  coverage, mean_estimate, mean_ci_width, n_regenerated, seed,
  registry_fingerprint
An existing file is resumed: cells already present are not recomputed.
"""


# --- helpers ----------------------------------------------------------------


def _seed(value: Optional[int], out) -> int:
    if value is not None:
        return value
    seed = rngmod.fresh_seed()
    print(f"# seed: {seed} (generated; pass --seed {seed} to reproduce)", file=out)
    return seed


def _floats(text: str, what: str) -> list:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"{what}: expected comma-separated numbers, got {text!r}") from None
    if not values:
        raise ValidationError(f"{what}: at least one value required")
    return values


def _methods(text: str) -> list:
    names = [m.strip() for m in text.split(",") if m.strip()]
    if not names:
        raise ValidationError("no methods requested")
    valid = {m.value.lower(): m for m in ALL_METHODS}
    for n in names:
        if n.lower() not in valid:
            raise ValidationError(f"unknown method {n!r} "
                                  f"(choose from {', '.join(m.value for m in ALL_METHODS)})")
    return [valid[n.lower()] for n in names]


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return "" if x is None else str(x)


def _delimiter_for(path) -> str:
    return "\t" if str(path).endswith(".tsv") else ","


def _print_table(rows, out):
    widths = [max(len(r[j]) for r in rows) for j in range(len(rows[0]))]
    for r in rows:
        print("  ".join(v.rjust(w) for v, w in zip(r, widths)), file=out)


# --- analyze ----------------------------------------------------------------


def _analyze_t_star(sample, t_star, alpha, methods, adjust, n_resamples, seed, strata):
    """Rows for one ``t_star``; never raises for estimation problems."""
    arms = [sample.arm(g) for g in (0, 1)]
    if not all(is_arm_estimable(a.time, a.status, t_star) for a in arms):
        return [dict(t_star=t_star, method=m.value, adjusted="", status="inestimable")
                for m in methods]
    runs = [(m, ()) for m in methods]
    if adjust:
        runs += [(m, tuple(adjust)) for m in methods if m in (Method.PO1, Method.PO2)]
    rows = []
    for method, covs in runs:
        row = dict(t_star=t_star, method=method.value, adjusted="+".join(covs))
        try:
            res = run_all_methods(sample, t_star, alpha, n_resamples, seed, covs, [method],
                                  strata=strata)[0]
        except EstimationError as exc:
            row["status"] = f"failed: {exc}"
        else:
            row.update(status="ok", estimate=res.estimate, se=res.se, statistic=res.statistic,
                       p_value=res.p_value, ci_low=res.ci_low, ci_high=res.ci_high,
                       reject=int(res.reject), n_resamples=res.n_resamples or None, seed=res.seed)
        rows.append(row)
    return rows


def _analyze_worker(args):
    return _analyze_t_star(*args)


def cmd_analyze(args, out) -> int:
    methods = _methods(args.methods)
    t_stars = _floats(args.t_star, "--t-star")
    if any(not t > 0 for t in t_stars):
        raise ValidationError("--t-star values must be positive")
    adjust = [c.strip() for c in (args.adjust or "").split(",") if c.strip()]
    if adjust and not any(m in (Method.PO1, Method.PO2) for m in methods):
        raise ValidationError("--adjust applies to PO1/PO2 only; none requested")
    if args.ovarian:
        data = ovarian_data()
        if adjust and not set(adjust) <= set(data.sample.covariate_names):
            raise ValidationError(f"unknown covariate; the ovarian data has "
                                  f"{', '.join(data.sample.covariate_names)}")
    elif args.input:
        if args.delimiter is not None and args.delimiter not in DELIMITERS:
            raise ValidationError("--delimiter must be ',', ';' or a tab")
        data = load_sample(args.input, delimiter=args.delimiter, time=args.time, status=args.status,
                           group=args.group, covariates=adjust, time_scale=args.time_scale)
    else:
        raise ValidationError("give an input file or --ovarian")
    strata = Strata(args.po_strata)
    seed = _seed(args.seed, out)
    sample = data.sample
    _analysis_header(data, args, seed, out)

    jobs = [(sample, t, args.alpha, methods, adjust, args.B, seed, strata) for t in t_stars]
    if args.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(min(args.workers, len(jobs))) as pool:
            blocks = list(pool.map(_analyze_worker, jobs))
    else:
        blocks = [_analyze_worker(j) for j in jobs]
    rows = [r for block in blocks for r in block]

    table = [list(RESULT_COLUMNS)] + [[_fmt(r.get(c)) for c in RESULT_COLUMNS] for r in rows]
    display = [[c for c in table[0] if c not in ("n_resamples", "seed")]]
    for r in rows:
        display.append([_short(r.get(c)) for c in display[0]])
    _print_table(display, out)
    print(CAVEAT, file=out)
    if args.output:
        d = _delimiter_for(args.output)
        Path(args.output).write_text("".join(d.join(line) + "\n" for line in table))
    return EXIT_ESTIMATION if any(r["status"].startswith("failed") for r in rows) else EXIT_OK


def _short(v) -> str:
    if isinstance(v, float):
        return f"{v:.4f}"
    return "" if v is None else str(v)


def _analysis_header(data: LoadedData, args, seed, out):
    s = data.sample
    n1 = int(s.group.sum())
    lv = data.group_levels
    print(f"# data: {data.source}  n={s.n}  control ({lv[0]}) n={s.n - n1}  "
          f"treatment ({lv[1]}) n={n1}  events={int(s.status.sum())}", file=out)
    try:
        lr = logrank_test(s.arm(0), s.arm(1))
        print(f"# log-rank: chi2={lr.statistic:.4f}  p={lr.p_value:.4f}", file=out)
    except RMSTError as exc:
        print(f"# log-rank: not available ({exc})", file=out)
    print(f"# alpha={args.alpha}  B={args.B}  seed={seed}  po_strata={args.po_strata}", file=out)


# --- simulate ---------------------------------------------------------------


def _read_config(path) -> dict:
    try:
        raw = yaml.safe_load(Path(path).read_text()) or {}
    except yaml.YAMLError as exc:
        raise ValidationError(f"config {path}: not valid YAML ({exc})") from None
    if not isinstance(raw, dict):
        raise ValidationError(f"config {path}: expected a mapping")
    unknown = sorted(set(raw) - CONFIG_KEYS)
    if unknown:
        raise ValidationError(f"config {path}: unknown key {unknown[0]!r}")
    return raw


def simulation_cells(args, registry) -> list:
    config = _read_config(args.config) if args.config else {}
    fixed = dict(DESK_SCALE)
    if args.full_scale:
        fixed.update(FULL_SCALE)
    for key in ("t_star", "alpha", "n_sim", "b_resamples", "master_seed"):
        if key in config:
            fixed[key] = config[key]
    overrides = {"n_sim": args.nsim, "b_resamples": args.B, "master_seed": args.seed,
                 "t_star": args.t_star, "alpha": args.alpha}
    fixed.update({k: v for k, v in overrides.items() if v is not None})
    fixed.setdefault("t_star", registry.t_star)
    texts = list(args.cell or []) or list(config.get("cells") or [])
    try:
        if texts:
            return [parse_cell(t, **fixed) for t in texts]
        grid = {k: config.get(k) for k in ("survival", "censoring", "deltas", "allocations",
                                            "multipliers")}
        return expand_grid(registry, **grid, **fixed)
    except TypeError as exc:
        raise ValidationError(f"config: {exc}") from None


def cmd_simulate(args, out) -> int:
    registry = load_registry(args.registry)
    if args.seed is None:
        args.seed = _seed(None, out)
    cells = simulation_cells(args, registry)
    for c in cells:
        registry._survival(c.survival_model)
        registry._censoring(c.censoring_model)
    print(f"# {len(cells)} cells  registry={registry.source} ({registry.fingerprint})  "
          f"workers={args.workers}", file=out)

    def progress(res):
        print(f"{res.config.cell_id}  {res.wall_time:.1f}s  "
              + "  ".join(f"{m.method.value}={m.rejection_rate:.4f}" for m in res.methods),
              file=sys.stderr, flush=True)

    results = harness.run_grid(cells, workers=args.workers, results_path=args.output,
                               registry=registry, progress=None if args.quiet else progress)
    tables = harness.summarize(results)
    has_null = any(c.delta == 0 for c in cells)
    has_alt = any(c.delta != 0 for c in cells)
    sections = ([("type I error", "type_one_error")] if has_null else []) + \
               ([("power", "power")] if has_alt else []) + [("coverage", "coverage")]
    for title, key in sections:
        print(f"\n## {title}", file=out)
        out.write(tables[key])
    if has_null:
        counts = harness.in_band_counts(results)
        print("\n## null cells inside the binomial band", file=out)
        print("  ".join(f"{m.value}: {a}/{b}" for m, (a, b) in counts.items()), file=out)
    return EXIT_OK


# --- calibrate --------------------------------------------------------------


def _describe(dist) -> str:
    name = type(dist).__name__
    fields = ", ".join(f"{k}={v!r}" for k, v in vars(dist).items())
    return f"{name}({fields})"


def cmd_calibrate(args, out) -> int:
    registry = load_registry(args.registry)
    t_star = registry.t_star if args.t_star is None else args.t_star
    d0, d1 = calibrate_scenario(args.model, args.delta, t_star, registry)
    mu0, mu1 = true_rmst(d0, t_star), true_rmst(d1, t_star)
    print(f"model {args.model}  delta {args.delta:g}  t_star {t_star:g}", file=out)
    print(f"control:    {_describe(d0)}  rmst={mu0!r}", file=out)
    print(f"treatment:  {_describe(d1)}  rmst={mu1!r}", file=out)
    print(f"residual:   {mu1 - mu0 - args.delta:.3e}", file=out)
    cross = crossing_points(d0, d1, t_star)
    if d0 == d1:
        print("crossings:  identical distributions", file=out)
    elif len(cross):
        print("crossings:  sign change of S1 - S0 at t = "
              + ", ".join(f"{c:.4f}" for c in cross), file=out)
    else:
        print(f"crossings:  none on (0, {t_star:g})", file=out)
    return EXIT_OK


# --- export -----------------------------------------------------------------


def cmd_export(args, out) -> int:
    registry = load_registry(args.registry)
    config = parse_cell(args.cell, master_seed=args.seed, t_star=args.t_star or registry.t_star)
    sample = export_replicate(config, args.replicate, args.output, registry)
    print(f"# wrote {sample.n} rows of {config.cell_id} replicate {args.replicate} "
          f"to {args.output}", file=out)
    return EXIT_OK


# --- entry point ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rmstpo",
                                     description="Two-sample RMST tests and their simulation study.")
    sub = parser.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="test RMST differences in a dataset",
                       epilog=ANALYZE_EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    a.add_argument("input", nargs="?", help="delimited data file")
    a.add_argument("--ovarian", action="store_true", help="use the bundled ovarian cancer data")
    a.add_argument("--delimiter", help="field delimiter (default: detected)")
    a.add_argument("--time", default="time", help="time column (default: time)")
    a.add_argument("--status", default="status", help="event indicator column (default: status)")
    a.add_argument("--group", default="group", help="two-level group column (default: group)")
    a.add_argument("--time-scale", type=float, default=1.0,
                   help="divide times by this factor (e.g. 30.4375 for days to months)")
    a.add_argument("--t-star", default="10", help="comma-separated restriction times")
    a.add_argument("--alpha", type=float, default=0.05)
    a.add_argument("--methods", default="Asy,Perm,PO1,PO2", help="comma-separated subset")
    a.add_argument("--adjust", help="comma-separated covariates for additional adjusted PO runs")
    a.add_argument("--po-strata", choices=[s.value for s in Strata], default=Strata.BY_GROUP.value)
    a.add_argument("--B", type=int, default=1000, help="resamples for Perm and PO2")
    a.add_argument("--seed", type=int)
    a.add_argument("--workers", type=int, default=1, help="processes across t_star values")
    a.add_argument("--output", help="write the result table here")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("simulate", help="run simulation cells",
                       epilog=SIMULATE_EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    s.add_argument("--cell", action="append", help="MODEL,CENSORING,DELTA,N0:N1,K (repeatable)")
    s.add_argument("--config", help="YAML run configuration")
    s.add_argument("--nsim", type=int)
    s.add_argument("--B", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--t-star", type=float)
    s.add_argument("--alpha", type=float)
    s.add_argument("--full-scale", action="store_true",
                   help=f"n_sim={FULL_SCALE['n_sim']} and B={FULL_SCALE['b_resamples']}")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--registry", help="scenario registry YAML (default: bundled)")
    s.add_argument("--output", help="results file (resumed if it exists)")
    s.add_argument("--quiet", action="store_true", help="no per-cell progress on stderr")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("calibrate", help="show calibrated scenario distributions")
    c.add_argument("model")
    c.add_argument("delta", type=float)
    c.add_argument("--t-star", type=float)
    c.add_argument("--registry")
    c.set_defaults(func=cmd_calibrate)

    e = sub.add_parser("export", help="write one simulated dataset")
    e.add_argument("--cell", required=True)
    e.add_argument("--replicate", type=int, default=0)
    e.add_argument("--seed", type=int, required=True)
    e.add_argument("--t-star", type=float)
    e.add_argument("--registry")
    e.add_argument("--output", required=True)
    e.set_defaults(func=cmd_export)
    return parser


def main(argv: Optional[Sequence[str]] = None, out=None) -> int:
    out = out or sys.stdout
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_VALIDATION
    if getattr(args, "workers", 1) < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        return args.func(args, out)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except EstimationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
