"""Monte Carlo study over scenario cells.

A cell is one :class:`~rmstpo.simgen.ScenarioConfig`.  For each replicate
``r`` the dataset comes from :func:`~rmstpo.simgen.make_dataset` and the
resampling seed from ``derive_seed(master_seed, cell_key, r)``, so any
replicate can be regenerated on its own and results do not depend on how
replicates are spread over workers.

Results file
------------
Comma-separated text.  The first line is ``# registry_fingerprint=<hex>``,
the second the column header, then one row per (cell, method) with columns
``scenario, censoring, delta, n0, n1, k, method, n_sim, b, rejection_rate,
coverage, mean_estimate, mean_ci_width, n_regenerated, seed,
registry_fingerprint``.  ``n0, n1`` are the base allocation; the arm sizes
are ``k * n0`` and ``k * n1``.  Rows are written cell by cell in grid order
as soon as a cell and all cells before it are complete, so an interrupted
run leaves a valid prefix that a resumed run extends.
"""

from __future__ import annotations

import csv
import io
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import spearmanr

from . import rng as rngmod
from .errors import RMSTError, ValidationError
from .inference import run_all_methods
from .results import ALL_METHODS, Method
from .simgen import Registry, ScenarioConfig, default_registry, make_dataset

COLUMNS = ("scenario", "censoring", "delta", "n0", "n1", "k", "method", "n_sim", "b",
           "rejection_rate", "coverage", "mean_estimate", "mean_ci_width", "n_regenerated",
           "seed", "registry_fingerprint")
REPLICATE_CHUNK = 50


@dataclass(frozen=True)
class MethodSummary:
    method: Method
    n_completed: int
    n_reject: int
    n_cover: int
    mean_estimate: float
    mean_ci_width: float

    @property
    def rejection_rate(self) -> float:
        return self.n_reject / self.n_completed

    @property
    def coverage(self) -> float:
        return self.n_cover / self.n_completed


@dataclass(frozen=True)
class ScenarioResult:
    config: ScenarioConfig
    methods: tuple
    n_completed: int
    n_regenerated: int
    wall_time: float = math.nan

    def method(self, method) -> MethodSummary:
        method = Method(method)
        for m in self.methods:
            if m.method is method:
                return m
        raise KeyError(method)

    def rows(self, fingerprint: str) -> list:
        c = self.config
        n0, n1 = c.base_allocation
        return [[c.survival_model, c.censoring_model, repr(c.delta), str(n0), str(n1), str(c.k),
                 m.method.value, str(m.n_completed), str(c.b_resamples), repr(m.rejection_rate),
                 repr(m.coverage), repr(m.mean_estimate), repr(m.mean_ci_width),
                 str(self.n_regenerated), str(c.master_seed), fingerprint]
                for m in self.methods]


def replicate_seed(config: ScenarioConfig, replicate_index: int) -> int:
    """Resampling seed used for replicate ``replicate_index`` of a cell."""
    return rngmod.derive_seed(config.master_seed, config.cell_key, replicate_index)


def _run_replicates(config: ScenarioConfig, lo: int, hi: int, registry: Registry):
    """Per-replicate records for replicates ``lo .. hi - 1``."""
    k = len(ALL_METHODS)
    reject = np.zeros((hi - lo, k), dtype=bool)
    cover = np.zeros((hi - lo, k), dtype=bool)
    estimate = np.zeros((hi - lo, k))
    width = np.zeros((hi - lo, k))
    regenerated = 0
    for row, r in enumerate(range(lo, hi)):
        try:
            data = make_dataset(config, r, registry)
            results = run_all_methods(data.sample, config.t_star, config.alpha,
                                      config.b_resamples, replicate_seed(config, r))
        except RMSTError as exc:
            raise type(exc)(f"cell {config.cell_id}, replicate {r}: {exc}") from exc
        regenerated += data.n_regenerated
        for j, res in enumerate(results):
            reject[row, j] = res.reject
            cover[row, j] = res.covers(config.delta)
            estimate[row, j] = res.estimate
            width[row, j] = res.ci_high - res.ci_low
    return reject, cover, estimate, width, regenerated


def _aggregate(config, parts, wall_time):
    reject = np.concatenate([p[0] for p in parts])
    cover = np.concatenate([p[1] for p in parts])
    estimate = np.concatenate([p[2] for p in parts])
    width = np.concatenate([p[3] for p in parts])
    n = reject.shape[0]
    methods = tuple(
        MethodSummary(method=m, n_completed=n, n_reject=int(reject[:, j].sum()),
                      n_cover=int(cover[:, j].sum()), mean_estimate=float(estimate[:, j].mean()),
                      mean_ci_width=float(width[:, j].mean()))
        for j, m in enumerate(ALL_METHODS))
    return ScenarioResult(config, methods, n, int(sum(p[4] for p in parts)), wall_time)


def run_cell(config: ScenarioConfig, registry: Optional[Registry] = None) -> ScenarioResult:
    """Run all replicates of one cell in this process."""
    registry = registry or default_registry()
    start = time.perf_counter()
    part = _run_replicates(config, 0, config.n_sim, registry)
    return _aggregate(config, [part], time.perf_counter() - start)


# --- results file -----------------------------------------------------------


def _row_key(row) -> tuple:
    return (row["scenario"], row["censoring"], float(row["delta"]), int(row["n0"]),
            int(row["n1"]), int(row["k"]), int(row["n_sim"]), int(row["b"]), int(row["seed"]))


def _config_key(c: ScenarioConfig) -> tuple:
    return (c.survival_model, c.censoring_model, c.delta, *c.base_allocation, c.k, c.n_sim,
            c.b_resamples, c.master_seed)


def read_results(path) -> tuple:
    """Return ``(fingerprint, rows)`` where rows are dicts keyed by column."""
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("# registry_fingerprint="):
            raise ValidationError(f"{path}: not a results file")
        fingerprint = first.strip().split("=", 1)[1]
        rows = list(csv.DictReader(fh))
    return fingerprint, rows


def _result_from_rows(config, rows):
    by_method = {Method(r["method"]): r for r in rows}
    methods = []
    for m in ALL_METHODS:
        r = by_method[m]
        n = int(r["n_sim"])
        methods.append(MethodSummary(m, n, round(float(r["rejection_rate"]) * n),
                                     round(float(r["coverage"]) * n), float(r["mean_estimate"]),
                                     float(r["mean_ci_width"])))
    return ScenarioResult(config, tuple(methods), methods[0].n_completed,
                          int(rows[0]["n_regenerated"]))


def _format_rows(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def run_grid(cells: Sequence[ScenarioConfig], workers: int = 1,
             results_path: Optional[str] = None, registry: Optional[Registry] = None,
             progress: Optional[Callable[[ScenarioResult], None]] = None) -> list:
    """Run every cell, optionally persisting to and resuming from ``results_path``.

    Replicates are split into chunks of :data:`REPLICATE_CHUNK` and spread
    over ``workers`` processes.  Returned results follow the order of
    ``cells``; cells read back from a resumed file have ``wall_time`` NaN.
    """
    cells = list(cells)
    if not cells:
        raise ValidationError("empty cell list")
    if workers < 1:
        raise ValidationError("workers must be >= 1")
    registry = registry or default_registry()
    fingerprint = registry.fingerprint

    done = {}
    if results_path is not None and os.path.exists(results_path):
        found, rows = read_results(results_path)
        if found != fingerprint:
            raise ValidationError(f"{results_path} was written with registry {found}, "
                                  f"not {fingerprint}")
        for row in rows:
            done.setdefault(_row_key(row), []).append(row)
    elif results_path is not None:
        with open(results_path, "w") as fh:
            fh.write(f"# registry_fingerprint={fingerprint}\n")
            fh.write(",".join(COLUMNS) + "\n")

    results = [None] * len(cells)
    pending = []
    for i, cell in enumerate(cells):
        rows = done.get(_config_key(cell))
        if rows is not None and len(rows) == len(ALL_METHODS):
            results[i] = _result_from_rows(cell, rows)
        else:
            pending.append(i)

    sink = open(results_path, "a") if results_path is not None else None
    try:
        _execute(cells, pending, results, workers, registry, sink, fingerprint, progress)
    finally:
        if sink is not None:
            sink.close()
    return results


def _execute(cells, pending, results, workers, registry, sink, fingerprint, progress):
    items = [(i, lo, min(lo + REPLICATE_CHUNK, cells[i].n_sim))
             for i in pending for lo in range(0, cells[i].n_sim, REPLICATE_CHUNK)]
    parts = {i: {} for i in pending}
    started = {}
    cursor = [0]

    def finished(i):
        chunks = parts[i]
        return len(chunks) == math.ceil(cells[i].n_sim / REPLICATE_CHUNK)

    def flush():
        # write completed cells strictly in grid order
        while cursor[0] < len(pending) and finished(pending[cursor[0]]):
            i = pending[cursor[0]]
            chunks = parts.pop(i)
            res = _aggregate(cells[i], [chunks[lo] for lo in sorted(chunks)],
                             time.perf_counter() - started[i])
            results[i] = res
            if sink is not None:
                sink.write(_format_rows(res.rows(fingerprint)))
                sink.flush()
            if progress is not None:
                progress(res)
            cursor[0] += 1

    if workers == 1:
        for i, lo, hi in items:
            started.setdefault(i, time.perf_counter())
            parts[i][lo] = _run_replicates(cells[i], lo, hi, registry)
            flush()
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = []
        for i, lo, hi in items:
            started.setdefault(i, time.perf_counter())
            futures.append((i, lo, pool.submit(_run_replicates, cells[i], lo, hi, registry)))
        for i, lo, fut in futures:
            parts[i][lo] = fut.result()
            flush()


# --- summaries --------------------------------------------------------------


def binomial_band(n_sim: int, level: float = 0.05, z: float = 1.96) -> tuple:
    """Normal-approximation 95% range of a rejection rate with true value ``level``."""
    half = z * math.sqrt(level * (1.0 - level) / n_sim)
    return level - half, level + half


def in_band(rate: float, n_sim: int, level: float = 0.05) -> bool:
    lo, hi = binomial_band(n_sim, level)
    return lo <= rate <= hi


def _table(header, rows) -> str:
    return _format_rows([header, *rows])


def _fmt(x) -> str:
    return f"{x:.4f}"


def type_one_error_table(results) -> str:
    rows = []
    for res in results:
        c = res.config
        if c.delta != 0:
            continue
        lo, hi = binomial_band(res.n_completed, c.alpha)
        for m in res.methods:
            rows.append([c.survival_model, c.censoring_model, f"{c.base_allocation[0]}:{c.base_allocation[1]}",
                         str(c.k), m.method.value, str(res.n_completed), _fmt(m.rejection_rate),
                         _fmt(lo), _fmt(hi), str(int(lo <= m.rejection_rate <= hi))])
    return _table(["scenario", "censoring", "allocation", "k", "method", "n_sim",
                   "rejection_rate", "band_low", "band_high", "in_band"], rows)


def in_band_counts(results) -> dict:
    """Method -> (cells in band, null cells)."""
    counts = {m: [0, 0] for m in ALL_METHODS}
    for res in results:
        if res.config.delta != 0:
            continue
        for m in res.methods:
            counts[m.method][0] += in_band(m.rejection_rate, res.n_completed, res.config.alpha)
            counts[m.method][1] += 1
    return {m: tuple(v) for m, v in counts.items()}


def power_by_total_n(results) -> dict:
    """``(scenario, total N, method) -> mean rejection`` over cells with delta != 0.

    Cells of different censoring models and allocations are averaged with
    equal weight.
    """
    acc = {}
    for res in results:
        c = res.config
        if c.delta == 0:
            continue
        for m in res.methods:
            acc.setdefault((c.survival_model, sum(c.sizes), m.method), []).append(m.rejection_rate)
    return {key: float(np.mean(v)) for key, v in sorted(acc.items(), key=lambda kv: (kv[0][0], kv[0][1], ALL_METHODS.index(kv[0][2])))}


def power_table(results) -> str:
    acc = {}
    for res in results:
        c = res.config
        if c.delta == 0:
            continue
        for m in res.methods:
            acc.setdefault((c.survival_model, c.delta, sum(c.sizes), m.method.value), []).append(m.rejection_rate)
    rows = [[s, f"{d:g}", str(n), meth, _fmt(float(np.mean(v))), str(len(v))]
            for (s, d, n, meth), v in acc.items()]
    return _table(["scenario", "delta", "total_n", "method", "power", "n_cells"], rows)


def coverage_table(results) -> str:
    acc = {}
    for res in results:
        c = res.config
        key = (f"{c.base_allocation[0]}:{c.base_allocation[1]}", c.k, c.delta)
        for m in res.methods:
            acc.setdefault(key + (m.method.value,), []).append(m.coverage)
    rows = [[a, str(k), f"{d:g}", meth, _fmt(float(np.mean(v))), str(len(v))]
            for (a, k, d, meth), v in acc.items()]
    return _table(["allocation", "k", "delta", "method", "coverage", "n_cells"], rows)


def summarize(results) -> dict:
    """Delimited-text tables: ``type_one_error``, ``power`` and ``coverage``."""
    results = [r for r in results if r is not None]
    if not results:
        raise ValidationError("no results to summarize")
    return {"type_one_error": type_one_error_table(results),
            "power": power_table(results),
            "coverage": coverage_table(results)}


def power_trend(results) -> dict:
    """Spearman correlation of power with K per (scenario, censoring, method).

    Power at each K is averaged over allocations.  Returns NaN where fewer
    than two K values are present.
    """
    acc = {}
    for res in results:
        c = res.config
        if c.delta == 0:
            continue
        for m in res.methods:
            acc.setdefault((c.survival_model, c.censoring_model, m.method), {}).setdefault(
                c.k, []).append(m.rejection_rate)
    out = {}
    for key, by_k in acc.items():
        ks = sorted(by_k)
        if len(ks) < 2:
            out[key] = math.nan
            continue
        power = [float(np.mean(by_k[k])) for k in ks]
        out[key] = float(spearmanr(ks, power)[0]) if len(set(power)) > 1 else math.nan
    return out
