"""Command-line entry point: ``cooplbm <subcommand> ...``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench
from .core import (
    CountMatrix,
    drop_empty,
    observed_support,
    read_count_matrix,
    read_fit,
    write_count_matrix,
    write_fit,
)
from .lbm import fit_lbm
from .metrics import (
    CompletionMethod,
    ari,
    auc,
    bipartite_modularity,
    chao_coverage,
    complete_matrix,
    connectivity_chao,
    connectivity_coop,
    nodf,
)
from .selection import explore
from .sem import SemConfig, run_sem
from .simulate import motivating_config, paper_config, simulate_coop, subsample_binomial, subsample_multinomial

METRICS = ("ari", "auc", "chao", "connectivity", "nodf", "modularity")


def _sem_config(args) -> SemConfig:
    return SemConfig(
        burn_in=args.burn_in,
        post_iter=args.iters,
        eps=args.eps,
        seed=args.seed,
        restarts=args.restarts,
        init=args.init,
    )


def _load(path) -> CountMatrix:
    r, _, _ = drop_empty(read_count_matrix(path))
    return r


def _output(args, default):
    return Path(args.output) if args.output else Path(default)


def cmd_simulate(args):
    make = paper_config if args.preset == "paper" else motivating_config
    sim = simulate_coop(make(n=args.n, g=args.g, seed=args.seed))
    out = _output(args, "simulated.csv")
    write_count_matrix(sim.r, out)
    truth = {
        "m": sim.m.tolist(),
        "row_labels": (sim.true_z1.labels + 1).tolist(),
        "col_labels": (sim.true_z2.labels + 1).tolist(),
        "lambda": sim.true_lambda.tolist(),
        "mu": sim.true_mu.tolist(),
        "g": sim.true_g,
        "kept_rows": (sim.kept_rows + 1).tolist(),
        "kept_cols": (sim.kept_cols + 1).tolist(),
        "seed": args.seed,
    }
    out.with_suffix(".truth.json").write_text(json.dumps(truth), encoding="utf-8")


def cmd_fit(args):
    r = _load(args.input)
    if args.model == "coop":
        result = run_sem(r, args.q1, args.q2, _sem_config(args))
    else:
        result = fit_lbm(observed_support(r), args.q1, args.q2, seed=args.seed, restarts=args.restarts)
    write_fit(result, _output(args, "fit.json"))


def cmd_select(args):
    r = _load(args.input)
    report = explore(r, args.model, args.q_max, _sem_config(args))
    out = _output(args, "selection.json")
    report.write(out, out.with_suffix(".csv"))
    write_fit(report.best_fit, out.with_suffix(".best_fit.json"))


def cmd_metrics(args):
    r = _load(args.input)
    v = observed_support(r)
    which = [w.strip() for w in args.which.split(",") if w.strip()]
    unknown = set(which) - set(METRICS)
    if unknown:
        raise ValueError(f"unknown metrics: {sorted(unknown)}")
    fit = read_fit(args.fit) if args.fit else None
    truth = json.loads(Path(args.truth).read_text(encoding="utf-8")) if args.truth else None
    rows = []
    for name in which:
        if name == "chao":
            rows.append(("chao_coverage", chao_coverage(r)))
        elif name == "connectivity":
            rows.append(("connectivity_chao", connectivity_chao(v, chao_coverage(r))))
            if fit is not None and fit.model == "coop":
                rows.append(("connectivity_coop", connectivity_coop(fit, r)))
        elif name == "nodf":
            rows.append(("nodf", nodf(v)))
        elif name == "modularity":
            rows.append(("modularity", bipartite_modularity(v, 10, args.seed)[0]))
        elif name in ("ari", "auc"):
            if fit is None or truth is None:
                raise ValueError(f"metric {name!r} needs --fit and --truth")
            if name == "ari":
                rows.append(("ari_rows", ari(np.array(truth["row_labels"]), fit.row_clustering)))
                rows.append(("ari_cols", ari(np.array(truth["col_labels"]), fit.col_clustering)))
            else:
                m = np.array(truth["m"])
                zero = r.counts == 0
                rows.append(("auc", auc(fit.missing_prob[zero], m[zero])))
    out = _output(args, "metrics.csv")
    with out.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        w.writerows((k, repr(float(x))) for k, x in rows)


def cmd_complete(args):
    r = _load(args.input)
    fit = read_fit(args.fit) if args.fit else None
    method = CompletionMethod(args.method, args.n_miss, args.seed)
    filled = complete_matrix(observed_support(r), method, fit, r)
    write_count_matrix(CountMatrix(filled, r.row_names, r.col_names), _output(args, "completed.csv"))


def cmd_subsample(args):
    r = read_count_matrix(args.input)
    if args.scheme == "multinomial":
        sub = subsample_multinomial(r, args.fraction, args.seed)
    else:
        sub = subsample_binomial(r, args.fraction, args.seed)
    write_count_matrix(sub, _output(args, "subsample.csv"))


def _bench_matrix(args) -> CountMatrix:
    if args.input:
        return _load(args.input)
    return simulate_coop(paper_config(n=args.n, g=args.g_grid[-1], seed=args.seed)).r


def cmd_bench(args):
    out = _output(args, "bench")
    out.mkdir(parents=True, exist_ok=True)
    sem = SemConfig(burn_in=args.burn_in, post_iter=args.iters, eps=args.eps, restarts=args.restarts)
    q = None if args.select else (args.q1, args.q2)
    if args.experiment == "simulation":
        kw = dict(seed=args.seed, output_dir=str(out), select=args.select, q_max=args.q_max,
                  threads=args.threads, sem=sem)
        if args.full_scale:
            cfg = bench.BenchConfig.full_scale(**kw)
        else:
            cfg = bench.BenchConfig(g_grid=tuple(args.g_grid), replicates=args.replicates,
                                    scale=(args.n, args.n), **kw)
        bench.bench_simulation_study(cfg)
    elif args.experiment == "subsample_binomial":
        if args.p is None:
            raise ValueError("--p is required for the binomial sub-sampling benchmark")
        bench.bench_subsample_binomial(
            _bench_matrix(args), args.p, args.replicates, args.seed, q, sem, args.q_max,
            args.threads, out / "subsample_binomial.csv",
        )
    else:
        bench.bench_subsample_multinomial(
            _bench_matrix(args), tuple(args.keep_range), args.replicates, args.seed, q, sem,
            args.q_max, args.threads, out / "subsample_multinomial.csv",
            out / "subsample_multinomial_coverage.csv",
        )


def _sem_flags(p):
    p.add_argument("--burn-in", type=int, default=50)
    p.add_argument("--iters", type=int, default=50, help="post burn-in iterations")
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--restarts", type=int, default=3)
    p.add_argument("--init", choices=("hierarchical", "spectral", "kmeans"), default="hierarchical")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--output", "-o")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="cooplbm", description=__doc__, parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="simulate a network and its truth")
    p.add_argument("--preset", choices=("paper", "motivating"), default="paper")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--g", type=float, default=600.0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", parents=[common], help="fit a model with fixed block numbers")
    p.add_argument("--input", "-i", required=True)
    p.add_argument("--model", choices=("coop", "lbm"), default="coop")
    p.add_argument("--q1", type=int, required=True)
    p.add_argument("--q2", type=int, required=True)
    _sem_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", parents=[common], help="choose block numbers by ICL")
    p.add_argument("--input", "-i", required=True)
    p.add_argument("--model", choices=("coop", "lbm"), default="coop")
    p.add_argument("--q-max", type=int, default=10)
    _sem_flags(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("metrics", parents=[common], help="network and evaluation metrics")
    p.add_argument("--input", "-i", required=True)
    p.add_argument("--fit")
    p.add_argument("--truth", help="truth document written by 'simulate'")
    p.add_argument("--which", default="chao,connectivity,nodf,modularity")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("complete", parents=[common], help="impute missing interactions")
    p.add_argument("--input", "-i", required=True)
    p.add_argument("--fit")
    p.add_argument("--method", type=int, choices=(1, 2, 3), required=True)
    p.add_argument("--n-miss", type=int, default=0)
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("subsample", parents=[common], help="thin a count matrix")
    p.add_argument("--input", "-i", required=True)
    p.add_argument("--scheme", choices=("multinomial", "binomial"), required=True)
    p.add_argument("--fraction", type=float, required=True,
                   help="kept fraction of the total (multinomial) or per-observation p (binomial)")
    p.set_defaults(func=cmd_subsample)

    p = sub.add_parser("bench", parents=[common], help="benchmark harness")
    p.add_argument("--experiment", choices=("simulation", "subsample_binomial", "subsample_multinomial"),
                   default="simulation")
    p.add_argument("--g-grid", type=float, nargs="+", default=[100, 300, 600])
    p.add_argument("--replicates", type=int, default=5)
    p.add_argument("--n", type=int, default=60)
    p.add_argument("--full-scale", action="store_true")
    p.add_argument("--select", action="store_true", help="choose Q by ICL instead of fixing it")
    p.add_argument("--q1", type=int, default=3)
    p.add_argument("--q2", type=int, default=3)
    p.add_argument("--q-max", type=int, default=6)
    p.add_argument("--input", "-i", help="count matrix for the sub-sampling benchmarks")
    p.add_argument("--p", type=float, help="binomial keep probability")
    p.add_argument("--keep-range", type=float, nargs=2, default=[0.6, 0.9])
    _sem_flags(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        args.func(args)
    except Exception as exc:  # noqa: BLE001 - reported as a structured line
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
