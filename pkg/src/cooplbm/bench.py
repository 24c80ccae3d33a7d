"""Simulation-study and sub-sampling benchmarks emitting plot-ready CSV."""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import CountMatrix, drop_empty, observed_support
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
    rmse,
)
from .selection import explore
from .sem import SemConfig, coop_missing_prob, observed_missing_prob, run_sem
from .simulate import PAPER_PI, SimConfig, simulate_coop, subsample_binomial, subsample_multinomial

log = logging.getLogger(__name__)

EXPERIMENT_COLUMNS = {
    "ari_curve": ["q1_coop", "q2_coop", "q1_lbm", "q2_lbm",
                  "ari_row_coop", "ari_col_coop", "ari_row_lbm", "ari_col_lbm"],
    "auc_curve": ["auc_coop", "auc_lbm"],
    "effort_rmse": ["rmse_lambda", "rmse_mu", "g_true", "g_hat"],
    "connectivity_curve": ["density_m", "connectivity_truth", "connectivity_chao", "connectivity_coop"],
    "nestedness_modularity": [
        f"{metric}_{target}"
        for metric in ("nodf", "modularity")
        for target in ("m", "v", "lbm_oracle", "coop", "uniform")
    ],
}
SIMULATION_EXPERIMENTS = tuple(EXPERIMENT_COLUMNS)
PAPER_G_GRID = (25, 100, 200, 300, 400, 500, 600)


@dataclass(frozen=True)
class BenchConfig:
    experiments: tuple = SIMULATION_EXPERIMENTS
    g_grid: tuple = (100, 300, 600)
    replicates: int = 5
    scale: tuple = (60, 60)
    seed: int = 0
    output_dir: str | None = None
    select: bool = False
    q_max: int = 6
    threads: int = 1
    modularity_restarts: int = 5
    sem: SemConfig = field(default_factory=SemConfig)

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if not self.g_grid:
            raise ValueError("g_grid must not be empty")
        unknown = set(self.experiments) - set(SIMULATION_EXPERIMENTS)
        if unknown:
            raise ValueError(f"unknown experiments: {sorted(unknown)}")

    @classmethod
    def full_scale(cls, **kw):
        """Paper-scale study: 100 x 100 networks, 10 replicates, seven G values."""
        return cls(g_grid=PAPER_G_GRID, replicates=10, scale=(100, 100), **kw)


def replicate_seed(*key) -> int:
    return int(np.random.SeedSequence(list(key)).generate_state(1)[0])


def _fit_pair(r, v, q, sem: SemConfig, select: bool, q_max: int):
    if select:
        return explore(r, "coop", q_max, sem).best_fit, explore(r, "lbm", q_max, sem).best_fit
    return run_sem(r, *q, sem), fit_lbm(v, *q, seed=sem.seed, restarts=sem.restarts)


def _structure_metrics(name, mat, record, seed, restarts):
    record[f"nodf_{name}"] = nodf(mat)
    record[f"modularity_{name}"] = bipartite_modularity(mat, restarts, seed)[0]


def simulation_replicate(config: BenchConfig, g_index: int, rep: int) -> dict:
    """Simulate one network at G = g_grid[g_index], fit both models, score everything."""
    g = config.g_grid[g_index]
    seed = replicate_seed(config.seed, g_index, rep)
    third = np.full(3, 1 / 3)
    sim = simulate_coop(
        SimConfig(config.scale[0], config.scale[1], third, third, PAPER_PI, g, (0.3, 1.5), seed=seed)
    )
    sem = replace(config.sem, seed=seed)
    v = observed_support(sim.r)
    coop, lbm = _fit_pair(sim.r, v, (3, 3), sem, config.select, config.q_max)
    rec = {"G": g, "replicate": rep, "seed": seed, "n1": sim.r.n_rows, "n2": sim.r.n_cols}
    rec.update(
        q1_coop=coop.q[0], q2_coop=coop.q[1], q1_lbm=lbm.q[0], q2_lbm=lbm.q[1],
        ari_row_coop=ari(sim.true_z1, coop.row_clustering),
        ari_col_coop=ari(sim.true_z2, coop.col_clustering),
        ari_row_lbm=ari(sim.true_z1, lbm.row_clustering),
        ari_col_lbm=ari(sim.true_z2, lbm.col_clustering),
    )
    zero = sim.r.counts == 0
    truth_missing = sim.m[zero]
    if truth_missing.min() != truth_missing.max():
        rec["auc_coop"] = auc(coop.missing_prob[zero], truth_missing)
        rec["auc_lbm"] = auc(lbm.missing_prob[zero], truth_missing)
    else:
        rec["auc_coop"] = rec["auc_lbm"] = float("nan")
    rec.update(
        rmse_lambda=rmse(sim.true_lambda, coop.params.lam),
        rmse_mu=rmse(sim.true_mu, coop.params.mu),
        g_true=sim.true_g,
        g_hat=coop.params.g,
        density_m=float(sim.m.mean()),
        connectivity_truth=float(np.full(3, 1 / 3) @ PAPER_PI @ np.full(3, 1 / 3)),
        connectivity_chao=connectivity_chao(v, chao_coverage(sim.r)),
        connectivity_coop=connectivity_coop(coop, sim.r),
    )
    if "nestedness_modularity" in config.experiments:
        n_miss = int(sim.m.sum() - v.sum())
        mats = {
            "m": sim.m,
            "v": v,
            "lbm_oracle": complete_matrix(v, CompletionMethod(1, n_miss, seed), lbm),
            "coop": complete_matrix(v, CompletionMethod(2, 0, seed), coop, sim.r),
            "uniform": complete_matrix(v, CompletionMethod(3, n_miss, seed), None),
        }
        for name, mat in mats.items():
            _structure_metrics(name, mat, rec, seed, config.modularity_restarts)
    return rec


def _run_tasks(fn, tasks, threads):
    if threads <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(fn, *t) for t in tasks]
        return [f.result() for f in futures]


def write_rows(path, rows, columns) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row.get(k)) for k in columns})


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return int(x)
    return x


def bench_simulation_study(config: BenchConfig) -> dict:
    """Run every (G, replicate) cell; returns {experiment: rows} and writes one CSV per experiment."""
    tasks = [(config, gi, rep) for gi in range(len(config.g_grid)) for rep in range(config.replicates)]
    records = _run_tasks(simulation_replicate, tasks, config.threads)
    out = {}
    for exp in config.experiments:
        rows = [{"experiment": exp, **rec} for rec in records]
        out[exp] = rows
        if config.output_dir is not None:
            Path(config.output_dir).mkdir(parents=True, exist_ok=True)
            cols = ["experiment", "G", "replicate", "seed", "n1", "n2"] + EXPERIMENT_COLUMNS[exp]
            write_rows(Path(config.output_dir) / f"{exp}.csv", rows, cols)
    return out


def _fit_on(sub: CountMatrix, q, sem: SemConfig, q_max: int):
    """Fit both models on the non-empty part of ``sub``."""
    reduced, rows, cols = drop_empty(sub)
    v = observed_support(reduced)
    if q is None:
        coop, lbm = _fit_pair(reduced, v, None, sem, True, q_max)
    else:
        q = (min(q[0], reduced.n_rows), min(q[1], reduced.n_cols))
        coop, lbm = _fit_pair(reduced, v, q, sem, False, q_max)
    return reduced, rows, cols, coop, lbm


BINOMIAL_COLUMNS = ["replicate", "seed", "p", "n_pos", "n_neg", "auc_coop", "auc_lbm"]


def _binomial_replicate(r: CountMatrix, p, seed, rep, q, sem, q_max):
    s = replicate_seed(seed, rep)
    a = subsample_binomial(r, p, replicate_seed(s, 0))
    b = subsample_binomial(r, p, replicate_seed(s, 1))
    return _score_binomial(a, b, p, s, rep, q, sem, q_max)


def _score_binomial(a, b, p, s, rep, q, sem, q_max):
    reduced, rows, cols, coop, lbm = _fit_on(a, q, replace(sem, seed=s), q_max)
    zero = reduced.counts == 0
    target = b.counts[np.ix_(rows, cols)][zero] > 0
    if target.all() or not target.any():
        log.info("binomial replicate %d skipped: %d positives among %d candidate cells",
                 rep, int(target.sum()), target.size)
        return None
    return {
        "replicate": rep, "seed": s, "p": p,
        "n_pos": int(target.sum()), "n_neg": int((~target).sum()),
        "auc_coop": auc(observed_missing_prob(coop)[zero], target),
        "auc_lbm": auc(lbm.missing_prob[zero], target),
    }


def bench_subsample_binomial(r: CountMatrix, p: float, replicates: int = 20, seed=0, q=(3, 3),
                             sem: SemConfig = SemConfig(), q_max: int = 6, threads: int = 1,
                             output=None) -> list:
    """Fit on binomial thinning A, predict which zeros of A are non-zero in an independent thinning B.

    ``q=None`` selects the numbers of blocks by ICL for each fit.
    """
    if not 0 < p < 1:
        raise ValueError("p must lie strictly between 0 and 1")
    tasks = [(r, p, seed, rep, q, sem, q_max) for rep in range(replicates)]
    rows = [row for row in _run_tasks(_binomial_replicate, tasks, threads) if row is not None]
    if output is not None:
        write_rows(output, rows, BINOMIAL_COLUMNS)
    return rows


MULTINOMIAL_COLUMNS = ["replicate", "seed", "keep_fraction", "n_pos", "n_neg", "auc_coop", "auc_lbm",
                       "coverage_chao", "coverage_true", "coverage_coop"]
COVERAGE_COLUMNS = ["replicate", "axis", "species", "coverage_true", "coverage_coop"]


def _multinomial_replicate(r: CountMatrix, keep_range, seed, rep, q, sem, q_max):
    s = replicate_seed(seed, rep)
    rng = np.random.default_rng(s)
    keep = float(rng.uniform(*keep_range))
    # keeping the whole sample is the sample itself
    sub = r if keep >= 1 else subsample_multinomial(r, keep, replicate_seed(s, 0))
    truth = r.counts > 0
    if not np.any(truth & (sub.counts == 0)):
        log.info("multinomial replicate %d skipped: no missing cells", rep)
        return None
    reduced, rows, cols, coop, lbm = _fit_on(sub, q, replace(sem, seed=s), q_max)
    zero = reduced.counts == 0
    target = truth[np.ix_(rows, cols)][zero]
    if target.all() or not target.any():
        log.info("multinomial replicate %d skipped: single-class candidate cells", rep)
        return None
    p_coop = coop_missing_prob(coop, reduced)
    v = reduced.counts > 0
    true_support = truth[np.ix_(rows, cols)]
    row = {
        "replicate": rep, "seed": s, "keep_fraction": keep,
        "n_pos": int(target.sum()), "n_neg": int((~target).sum()),
        "auc_coop": auc(p_coop[zero], target),
        "auc_lbm": auc(lbm.missing_prob[zero], target),
        "coverage_chao": chao_coverage(reduced),
        "coverage_true": float(v.sum() / true_support.sum()),
        "coverage_coop": float(v.sum() / p_coop.sum()),
    }
    species = []
    for axis, names, idx in ((1, reduced.row_names, 0), (0, reduced.col_names, 1)):
        cov_true = v.sum(axis=axis) / true_support.sum(axis=axis)
        cov_coop = v.sum(axis=axis) / p_coop.sum(axis=axis)
        for name, ct, cc in zip(names, cov_true, cov_coop):
            species.append({"replicate": rep, "axis": "row" if idx == 0 else "col",
                            "species": name, "coverage_true": ct, "coverage_coop": cc})
    return row, species


def bench_subsample_multinomial(r: CountMatrix, keep_range=(0.6, 0.9), replicates: int = 30, seed=0,
                                q=(3, 3), sem: SemConfig = SemConfig(), q_max: int = 6,
                                threads: int = 1, output=None, coverage_output=None) -> list:
    """Multinomial re-sampling at a random kept fraction; score predicted missing cells against R."""
    lo, hi = keep_range
    if not 0 < lo <= hi <= 1:
        raise ValueError("keep_range must satisfy 0 < lo <= hi <= 1")
    tasks = [(r, keep_range, seed, rep, q, sem, q_max) for rep in range(replicates)]
    results = [x for x in _run_tasks(_multinomial_replicate, tasks, threads) if x is not None]
    rows = [row for row, _ in results]
    if output is not None:
        write_rows(output, rows, MULTINOMIAL_COLUMNS)
    if coverage_output is not None:
        write_rows(coverage_output, [s for _, sp in results for s in sp], COVERAGE_COLUMNS)
    return rows
