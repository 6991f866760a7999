"""Experiment harnesses behind the CLI: solver benchmark, convergence trace
against a long-run reference point, and cross-validated grid search."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from statistics import median
from typing import Optional, Sequence

import numpy as np

from sblr import loss as L
from sblr.bcd import fit_bcd
from sblr.bcpd import SolverConfig, fit, write_trace_csv
from sblr.dataio import generate_synthetic, kfold_split
from sblr.metrics import accuracy
from sblr.types import Dataset, ModelParams, RegConfig

__all__ = ["BENCH_CONFIGS", "BENCH_COLUMNS", "BenchResultRow", "run_bench", "aggregate",
           "write_bench_csv", "TraceRow", "run_trace", "write_trace_rows", "GridRow",
           "read_grid", "run_gridsearch", "write_grid_csv"]

BENCH_CONFIGS = {
    "ridge-dominated": (0.1, 1.0, 0.1, 1.0),
    "l1-dominated": (0.1, 0.0, 0.1, 0.0),
}
BENCH_COLUMNS = ("solver", "s", "t", "n", "seconds", "iters", "objective", "config")
SOLVERS = ("bcd", "bcpd")


def _fmt(x) -> str:
    return repr(float(x))


@dataclass(frozen=True)
class BenchResultRow:
    solver: str
    s: int
    t: int
    n: int
    seconds: float
    iters: int
    objective: float
    config: str

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}")
        if not self.seconds > 0:
            raise ValueError("a completed run must report positive wall-clock time")


def _one_run(size: int, rep: int, n: int, config: str, seed: int, solver_cfg: SolverConfig,
             trace_dir, timing: bool) -> list[BenchResultRow]:
    data_seed = np.random.SeedSequence([seed, size, rep])
    data = generate_synthetic(n, size, size, seed=data_seed)
    rows = []
    for name in SOLVERS:
        rep_fit = fit_bcd(data, solver_cfg) if name == "bcd" else fit(data, solver_cfg)
        rows.append(BenchResultRow(name, size, size, n, rep_fit.total_seconds,
                                   rep_fit.total_iters, rep_fit.objective, config))
        if trace_dir is not None:
            write_trace_csv(rep_fit, f"{trace_dir}/{name}_{size}_{rep}.csv", timing=timing)
    return rows


def run_bench(sizes: Sequence[int], n: int = 100, reps: int = 1, config: str = "l1-dominated",
              seed: int = 0, cap: int = 250, rank: int = 1, tol: float = 1e-3,
              max_iter: int = 500, parallel: int = 1, trace_dir=None,
              timing: bool = True) -> list[BenchResultRow]:
    """Run both solvers on square ``size x size`` synthetic problems.

    Each (size, rep) pair draws its own data from ``SeedSequence([seed, size, rep])``,
    so results do not depend on ``parallel`` or on the order of ``sizes``.
    """
    if config not in BENCH_CONFIGS:
        raise ValueError(f"unknown config {config!r}; choose from {sorted(BENCH_CONFIGS)}")
    sizes = [int(v) for v in sizes]
    if not sizes or min(sizes) < 1:
        raise ValueError("sizes must be positive")
    if max(sizes) > cap:
        raise ValueError(f"size {max(sizes)} exceeds the cap of {cap}; raise --cap to allow it")
    if reps < 1:
        raise ValueError("reps must be at least 1")
    mu1, mu2, nu1, nu2 = BENCH_CONFIGS[config]
    solver_cfg = SolverConfig(RegConfig(mu1, mu2, nu1, nu2, rank), max_iter=max_iter, tol=tol)
    jobs = [(size, rep) for size in sizes for rep in range(reps)]

    def job(sr):
        return _one_run(sr[0], sr[1], n, config, seed, solver_cfg, trace_dir, timing)

    if parallel > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(job, jobs))
    else:
        results = [job(sr) for sr in jobs]
    return [row for rows in results for row in rows]


def aggregate(rows: Sequence[BenchResultRow]) -> list[dict]:
    """Mean seconds and median iterations per (solver, size, config)."""
    groups: dict[tuple, list[BenchResultRow]] = {}
    for row in rows:
        groups.setdefault((row.config, row.s, row.t, row.solver), []).append(row)
    out = []
    for (config, s, t, solver), grp in groups.items():
        out.append({"solver": solver, "s": s, "t": t, "config": config, "reps": len(grp),
                    "mean_seconds": float(np.mean([r.seconds for r in grp])),
                    "median_iters": float(median(r.iters for r in grp)),
                    "mean_seconds_per_iter": float(np.mean(
                        [r.seconds / max(r.iters, 1) for r in grp]))})
    return out


def write_bench_csv(rows: Sequence[BenchResultRow], path, timing: bool = True) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BENCH_COLUMNS)
        for r in rows:
            w.writerow([r.solver, r.s, r.t, r.n, _fmt(r.seconds if timing else 0.0), r.iters,
                        _fmt(r.objective), r.config])


# ---------------------------------------------------------------------------
# convergence trace


@dataclass(frozen=True)
class TraceRow:
    k: int
    objective: float
    rel_err: float
    residual: float


def _distance(a: ModelParams, b: ModelParams) -> float:
    return math.sqrt(float(np.sum((a.U - b.U) ** 2) + np.sum((a.V - b.V) ** 2)
                           + (a.b - b.b) ** 2))


def run_trace(data: Dataset, reg: RegConfig, long_run_iters: int = 10000) -> list[TraceRow]:
    """Run BCPD for ``long_run_iters`` iterations, take the last iterate as the
    reference point and report each iterate's distance to it.

    The run stops early only at an exact fixed point, where the remaining
    iterates would all equal the reference.
    """
    if long_run_iters < 1:
        raise ValueError("long_run_iters must be at least 1")
    iterates: list[ModelParams] = []
    cfg = SolverConfig(reg, max_iter=long_run_iters, tol=np.finfo(float).smallest_subnormal)
    report = fit(data, cfg, callback=lambda k, p: iterates.append(p))
    ref = iterates[-1]
    return [TraceRow(rec.k, rec.objective, rec.rel_err, _distance(p, ref))
            for rec, p in zip(report.trace, iterates)]


def write_trace_rows(rows: Sequence[TraceRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("k", "F", "q", "residual"))
        for r in rows:
            w.writerow([r.k, _fmt(r.objective), _fmt(r.rel_err), _fmt(r.residual)])


# ---------------------------------------------------------------------------
# grid search

GRID_COLUMNS = ("mu1", "mu2", "nu1", "nu2")


@dataclass(frozen=True)
class GridRow:
    mu1: float
    mu2: float
    nu1: float
    nu2: float
    mean_accuracy: float
    best: bool = False


def read_grid(path) -> list[tuple[float, float, float, float]]:
    """Candidate tuples from a CSV whose header names ``mu1, mu2, nu1, nu2``."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in GRID_COLUMNS if c not in (reader.fieldnames or ())]
        if missing:
            raise ValueError(f"grid file lacks columns {missing}")
        grid = []
        for lineno, rec in enumerate(reader, start=2):
            try:
                grid.append(tuple(float(rec[c]) for c in GRID_COLUMNS))
            except (TypeError, ValueError) as exc:
                raise ValueError(f"grid file line {lineno}: {exc}") from None
    if not grid:
        raise ValueError("grid file contains no candidate tuples")
    return grid


def _cv_accuracy(data: Dataset, folds, reg: RegConfig, tol: float, max_iter: int) -> float:
    scores = []
    for i, test_idx in enumerate(folds):
        train_idx = np.concatenate([f for j, f in enumerate(folds) if j != i])
        train, test = data.subset(train_idx), data.subset(test_idx)
        params = fit(train, SolverConfig(reg, max_iter=max_iter, tol=tol)).params
        pred = np.where(L.margins(params, test) >= 0, 1.0, -1.0)
        scores.append(accuracy(test.y, pred))
    return float(np.mean(scores))


def run_gridsearch(data: Dataset, grid: Sequence[tuple], folds: int = 5, seed: int = 0,
                   rank: int = 1, tol: float = 1e-3, max_iter: int = 500) -> list[GridRow]:
    """Mean k-fold accuracy of BCPD per candidate; the first maximal row is flagged best."""
    if not grid:
        raise ValueError("grid is empty")
    split = kfold_split(data.n, folds, seed)
    accs = [_cv_accuracy(data, split, RegConfig(*g, rank=rank), tol, max_iter) for g in grid]
    best = int(np.argmax(accs))
    return [GridRow(*g, a, i == best) for i, (g, a) in enumerate(zip(grid, accs))]


def write_grid_csv(rows: Sequence[GridRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(GRID_COLUMNS + ("mean_accuracy", "best"))
        for r in rows:
            w.writerow([_fmt(r.mu1), _fmt(r.mu2), _fmt(r.nu1), _fmt(r.nu2),
                        _fmt(r.mean_accuracy), int(r.best)])
