"""``sblr`` command-line interface.

Exit codes: 0 success (tolerance reached), 3 iteration limit reached before
the tolerance, 1 file or input errors, 2 usage errors.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from sblr import bench
from sblr import loss as L
from sblr.bcd import fit_bcd
from sblr.bcpd import MAX_ITER, SolverConfig, SolverError, fit, write_trace_csv
from sblr.dataio import generate_synthetic, read_dataset, read_model, write_dataset, write_model
from sblr.linear import LinearModel, LinearSolverConfig, solve_linear
from sblr.metrics import accuracy
from sblr.multiclass import (class_probabilities, decision_scores, fit_multinomial,
                             fit_one_vs_all, predict_classes)
from sblr.types import MulticlassModel, RegConfig

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_MAX_ITER = 0, 1, 2, 3

SOLVERS = ("bcpd", "bcd", "linear", "sparse-linear", "ova", "multinomial")


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg_float(text: str) -> float:
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return v


def _sizes(text: str) -> list[int]:
    try:
        sizes = [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not sizes or min(sizes) < 1:
        raise argparse.ArgumentTypeError("sizes must be positive integers")
    return sizes


def _add_reg(p: argparse.ArgumentParser, mu1=0.1, mu2=1.0, nu1=0.1, nu2=1.0) -> None:
    p.add_argument("--rank", type=_positive_int, default=1, help="factor rank r (default 1)")
    p.add_argument("--mu1", type=_nonneg_float, default=mu1, help="l1 weight on U")
    p.add_argument("--mu2", type=_nonneg_float, default=mu2, help="ridge weight on U")
    p.add_argument("--nu1", type=_nonneg_float, default=nu1, help="l1 weight on V")
    p.add_argument("--nu2", type=_nonneg_float, default=nu2, help="ridge weight on V")


def _reg(args) -> RegConfig:
    return RegConfig(args.mu1, args.mu2, args.nu1, args.nu2, args.rank)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sblr", description="Sparse bilinear logistic regression on matrix-valued samples.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic two-class dataset")
    p.add_argument("--n", type=_positive_int, default=100, help="number of samples (even)")
    p.add_argument("--s", type=_positive_int, default=50, help="rows per sample")
    p.add_argument("--t", type=_positive_int, default=50, help="columns per sample")
    p.add_argument("--shift", type=float, default=1.0, help="class mean offset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output dataset file")

    p = sub.add_parser("train", help="fit a model")
    p.add_argument("--data", required=True, help="dataset file")
    _add_reg(p)
    p.add_argument("--tol", type=_positive_float, default=1e-3, help="stopping tolerance on q")
    p.add_argument("--max-iter", type=_positive_int, default=500, help="iteration limit (>= 1)")
    p.add_argument("--solver", choices=SOLVERS, default="bcpd")
    p.add_argument("--lambda", dest="lam", type=_nonneg_float, default=None,
                   help="l1 weight for the linear baselines (default 0 for linear, "
                        "0.01 for sparse-linear)")
    p.add_argument("--trace-out", help="write the per-iteration trace CSV here")
    p.add_argument("--model-out", help="write the fitted model here")
    p.add_argument("--seed", type=int, default=0, help="recorded for reproducibility; "
                   "all solvers are deterministic")
    p.add_argument("--no-timing", action="store_true",
                   help="write 0 in the trace seconds column")

    p = sub.add_parser("predict", help="score a dataset with a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="per-sample predictions CSV")

    p = sub.add_parser("bench", help="time BCD against BCPD on synthetic data")
    p.add_argument("--sizes", type=_sizes, default=[50, 100, 250],
                   help="comma-separated square sizes (default 50,100,250)")
    p.add_argument("--n", type=_positive_int, default=100)
    p.add_argument("--reps", type=_positive_int, default=1)
    p.add_argument("--config", choices=sorted(bench.BENCH_CONFIGS), default="l1-dominated")
    p.add_argument("--rank", type=_positive_int, default=1)
    p.add_argument("--tol", type=_positive_float, default=1e-3)
    p.add_argument("--max-iter", type=_positive_int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cap", type=_positive_int, default=250, help="largest size allowed")
    p.add_argument("--parallel", type=_positive_int, default=1, help="concurrent reps")
    p.add_argument("--out", required=True, help="per-run CSV")
    p.add_argument("--summary-out", help="aggregate CSV (mean time, median iterations)")
    p.add_argument("--trace-dir", help="directory for per-run trace CSVs")
    p.add_argument("--no-timing", action="store_true",
                   help="write 0 for every seconds field in the output files")

    p = sub.add_parser("trace", help="distance of each BCPD iterate to a long-run reference")
    p.add_argument("--data", required=True)
    _add_reg(p, 0.01, 0.5, 0.01, 0.5)
    p.add_argument("--long-run-iters", type=_positive_int, default=10000)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gridsearch", help="k-fold cross-validation over a (mu1,mu2,nu1,nu2) grid")
    p.add_argument("--data", required=True)
    p.add_argument("--folds", type=_positive_int, default=5)
    p.add_argument("--grid-file", required=True, help="CSV with columns mu1,mu2,nu1,nu2")
    p.add_argument("--rank", type=_positive_int, default=1)
    p.add_argument("--tol", type=_positive_float, default=1e-3)
    p.add_argument("--max-iter", type=_positive_int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    return parser


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    data = generate_synthetic(args.n, args.s, args.t, args.shift, args.seed)
    write_dataset(args.out, data)
    print(f"wrote {args.out}: n={data.n} s={data.s} t={data.t} shift={args.shift} "
          f"seed={args.seed}")
    return EXIT_OK


def _write_linear_trace(history, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("k", "F"))
        for k, f in enumerate(history):
            w.writerow([k, repr(float(f))])


def _write_ova_trace(model: MulticlassModel, path, timing: bool) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("class", "k", "F", "q", "L_u", "L_v", "seconds"))
        for cls, rep in zip(model.classes, model.reports):
            for r in rep.trace:
                w.writerow([cls, r.k] + [repr(float(v)) for v in
                                         (r.objective, r.rel_err, r.l_u, r.l_v,
                                          r.seconds if timing else 0.0)])


def cmd_train(args) -> int:
    multiclass = args.solver in ("ova", "multinomial")
    data = read_dataset(args.data, multiclass=multiclass)
    timing = not args.no_timing

    if args.solver in ("linear", "sparse-linear"):
        lam = args.lam if args.lam is not None else (0.0 if args.solver == "linear" else 0.01)
        res = solve_linear(data, lam, LinearSolverConfig(max_iter=args.max_iter))
        model, converged, objective, iters = res.model, res.converged, res.objective, res.iterations
        if args.trace_out:
            _write_linear_trace(res.history, args.trace_out)
    else:
        cfg = SolverConfig(_reg(args), max_iter=args.max_iter, tol=args.tol)
        if args.solver == "bcpd":
            report = fit(data, cfg)
        elif args.solver == "bcd":
            report = fit_bcd(data, cfg)
        elif args.solver == "ova":
            model = fit_one_vs_all(data, cfg)
            reports = model.reports
        else:
            model = fit_multinomial(data, cfg)
            reports = model.reports
        if args.solver in ("bcpd", "bcd"):
            model, reports = report.params, (report,)
            if args.trace_out:
                write_trace_csv(report, args.trace_out, timing=timing)
        elif args.trace_out:
            if args.solver == "ova":
                _write_ova_trace(model, args.trace_out, timing)
            else:
                write_trace_csv(reports[0], args.trace_out, timing=timing)
        converged = not any(r.termination_reason == MAX_ITER for r in reports)
        objective = sum(r.objective for r in reports)
        iters = max(r.total_iters for r in reports)

    if args.model_out:
        write_model(args.model_out, model)
    status = "converged" if converged else "iteration limit reached"
    print(f"solver={args.solver} iters={iters} objective={objective!r} status={status}")
    return EXIT_OK if converged else EXIT_MAX_ITER


def _score(model, path):
    """``(data, margins, probabilities, labels)`` for every sample in ``path``."""
    if isinstance(model, MulticlassModel):
        data = read_dataset(path, multiclass=True)
        scores = decision_scores(model, data)
        labels = predict_classes(model, data)
        margins = scores.max(axis=1)
        if model.mode == "multinomial":
            probs = class_probabilities(model, data).max(axis=1)
        else:
            probs = expit(margins)
        return data, margins, probs, labels
    data = read_dataset(path, multiclass=False)
    if isinstance(model, LinearModel):
        if (data.s, data.t) != model.shape:
            raise ValueError(f"model shape {model.shape} does not match data {(data.s, data.t)}")
        margins = data.flat @ model.w + model.b
    else:
        margins = L.margins(model, data)
    labels = np.where(margins >= 0, 1, -1)
    return data, margins, expit(margins), labels


def cmd_predict(args) -> int:
    model = read_model(args.model)
    data, margins, probs, labels = _score(model, args.data)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("index", "margin", "probability", "label"))
        for i in range(data.n):
            w.writerow([i, repr(float(margins[i])), repr(float(probs[i])), int(labels[i])])
    print(f"accuracy={accuracy(data.y, labels)!r} n={data.n}")
    return EXIT_OK


def cmd_bench(args) -> int:
    timing = not args.no_timing
    if args.trace_dir:
        Path(args.trace_dir).mkdir(parents=True, exist_ok=True)
    rows = bench.run_bench(args.sizes, args.n, args.reps, args.config, args.seed, args.cap,
                           args.rank, args.tol, args.max_iter, args.parallel, args.trace_dir,
                           timing)
    bench.write_bench_csv(rows, args.out, timing=timing)
    summary = bench.aggregate(rows)
    for g in summary:
        print(f"{g['solver']:>4} ({g['s']},{g['t']}) {g['config']}: "
              f"mean_seconds={g['mean_seconds']:.4g} median_iters={g['median_iters']:g}")
    if args.summary_out:
        cols = ("solver", "s", "t", "config", "reps", "mean_seconds", "median_iters",
                "mean_seconds_per_iter")
        with open(args.summary_out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for g in summary:
                row = dict(g)
                if not timing:
                    row["mean_seconds"] = row["mean_seconds_per_iter"] = 0.0
                w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in cols])
    return EXIT_OK


def cmd_trace(args) -> int:
    data = read_dataset(args.data, multiclass=False)
    rows = bench.run_trace(data, _reg(args), args.long_run_iters)
    bench.write_trace_rows(rows, args.out)
    final_q = rows[-1].rel_err if len(rows) > 1 else float("nan")
    print(f"iterations={rows[-1].k} final_F={rows[-1].objective!r} final_q={final_q!r}")
    return EXIT_OK


def cmd_gridsearch(args) -> int:
    data = read_dataset(args.data, multiclass=False)
    grid = bench.read_grid(args.grid_file)
    rows = bench.run_gridsearch(data, grid, args.folds, args.seed, args.rank, args.tol,
                                args.max_iter)
    bench.write_grid_csv(rows, args.out)
    best = next(r for r in rows if r.best)
    print(f"best mu1={best.mu1:g} mu2={best.mu2:g} nu1={best.nu1:g} nu2={best.nu2:g} "
          f"mean_accuracy={best.mean_accuracy:.4f}")
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "predict": cmd_predict, "bench": cmd_bench,
            "trace": cmd_trace, "gridsearch": cmd_gridsearch}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (OSError, ValueError, SolverError) as exc:
        print(f"sblr {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
