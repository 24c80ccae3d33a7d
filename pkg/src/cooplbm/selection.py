"""Choice of the numbers of blocks by ICL over a (Q1, Q2) grid."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.cluster import KMeans

from .core import Clustering, CountMatrix, FitResult, observed_support
from .lbm import fit_lbm, lbm_icl
from .sem import SemConfig, coop_icl, run_sem

__all__ = ["SelectionReport", "explore", "coop_icl", "lbm_icl"]

PATIENCE = 2
MAX_SPLIT_MERGE_ROUNDS = 5


@dataclass
class SelectionReport:
    model: str
    grid: dict = field(default_factory=dict)
    best: tuple = (1, 1)
    exploration_log: list = field(default_factory=list)

    @property
    def best_fit(self) -> FitResult:
        return self.grid[self.best]

    def table(self):
        return sorted((q1, q2, fit.icl) for (q1, q2), fit in self.grid.items())

    def write(self, json_path, csv_path=None) -> None:
        doc = {
            "model": self.model,
            "best": list(self.best),
            "icl": {f"{q1},{q2}": icl for q1, q2, icl in self.table()},
            "exploration_log": self.exploration_log,
        }
        Path(json_path).write_text(json.dumps(doc, indent=1), encoding="utf-8")
        if csv_path is not None:
            with Path(csv_path).open("w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["q1", "q2", "icl"])
                w.writerows(self.table())


def _compact(labels: np.ndarray) -> Clustering:
    _, inv = np.unique(labels, return_inverse=True)
    return Clustering(inv, int(inv.max()) + 1)


def split_largest(data: np.ndarray, z: Clustering, z_other: Clustering, seed) -> Clustering | None:
    """Split the largest block in two by 2-means on the nodes' mean profiles over the other axis."""
    k = int(np.argmax(z.sizes()))
    members = np.flatnonzero(z.labels == k)
    if members.size < 2:
        return None
    profile = data[members] @ z_other.onehot() / np.maximum(z_other.sizes(), 1)
    if np.allclose(profile, profile[0]):
        return None
    halves = KMeans(n_clusters=2, n_init=10, random_state=seed).fit_predict(profile)
    if halves.min() == halves.max():
        return None
    labels = z.labels.copy()
    labels[members[halves == 1]] = z.n_blocks
    return Clustering(labels, z.n_blocks + 1)


def merge_closest(z: Clustering, pi_rows: np.ndarray) -> Clustering | None:
    """Merge the two blocks whose connection-probability profiles are closest in L1."""
    q = z.n_blocks
    if q < 2:
        return None
    dist = np.abs(pi_rows[:, None, :] - pi_rows[None, :, :]).sum(axis=2)
    dist[np.diag_indices(q)] = np.inf
    a, b = np.unravel_index(np.argmin(dist), dist.shape)
    labels = np.where(z.labels == max(a, b), min(a, b), z.labels)
    return _compact(labels)


def explore(r, model: str = "coop", q_max: int = 10, config: SemConfig = SemConfig()) -> SelectionReport:
    """Forward search from (1, 1) followed by split-merge refits of the best cell."""
    if model not in ("coop", "lbm"):
        raise ValueError("model must be 'coop' or 'lbm'")
    if q_max < 1:
        raise ValueError("q_max must be at least 1")
    counts = r.counts if isinstance(r, CountMatrix) else np.asarray(r)
    v = observed_support(counts)
    n1, n2 = counts.shape
    lim1, lim2 = min(q_max, n1), min(q_max, n2)
    report = SelectionReport(model)

    def fit(q1, q2, init=None):
        if model == "coop":
            return run_sem(counts, q1, q2, config, init=init)
        return fit_lbm(v, q1, q2, seed=config.seed, restarts=config.restarts, init=init)

    def visit(cell, trigger, init=None):
        res = fit(*cell, init=init)
        old = report.grid.get(cell)
        accepted = old is None or res.icl > old.icl
        if accepted:
            report.grid[cell] = res
        report.exploration_log.append(
            {"q1": cell[0], "q2": cell[1], "icl": res.icl, "trigger": trigger, "accepted": accepted}
        )

    def best_cell():
        return max(report.grid, key=lambda c: (report.grid[c].icl, -c[0] - c[1]))

    visit((1, 1), "start")
    best = (1, 1)
    while True:
        moved = False
        for dim in (0, 1):
            for step in range(1, PATIENCE + 1):
                cell = list(best)
                cell[dim] += step
                cell = tuple(cell)
                if cell[0] > lim1 or cell[1] > lim2:
                    break
                if cell not in report.grid:
                    visit(cell, "forward")
                if report.grid[cell].icl > report.grid[best].icl:
                    best = cell
                    moved = True
                    break
        if not moved:
            break

    data = counts.astype(float) if model == "coop" else v.astype(float)
    for round_ in range(MAX_SPLIT_MERGE_ROUNDS):
        best = best_cell()
        fit_b = report.grid[best]
        z1, z2 = fit_b.row_clustering, fit_b.col_clustering
        pi = fit_b.params.pi
        proposals = []
        if best[0] < lim1:
            s = split_largest(data, z1, z2, config.seed + round_)
            if s is not None:
                proposals.append(((best[0] + 1, best[1]), "split", (s, z2)))
        if best[1] < lim2:
            s = split_largest(data.T, z2, z1, config.seed + round_)
            if s is not None:
                proposals.append(((best[0], best[1] + 1), "split", (z1, s)))
        m1 = merge_closest(z1, pi)
        if m1 is not None:
            proposals.append(((m1.n_blocks, best[1]), "merge", (m1, z2)))
        m2 = merge_closest(z2, pi.T)
        if m2 is not None:
            proposals.append(((best[0], m2.n_blocks), "merge", (z1, m2)))
        for cell, trigger, init in proposals:
            visit(cell, trigger, init)
        if best_cell() == best:
            break
    report.best = best_cell()
    return report
