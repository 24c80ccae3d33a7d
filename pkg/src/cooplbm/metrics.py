"""Evaluation and network-description metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import comb
from scipy.stats import rankdata

from .core import Clustering, CountMatrix, FitResult
from .sem import coop_missing_prob


def _labels(c) -> np.ndarray:
    return c.labels if isinstance(c, Clustering) else np.asarray(c)


def ari(a, b) -> float:
    """Hubert-Arabie adjusted Rand index."""
    a, b = _labels(a), _labels(b)
    if a.size != b.size:
        raise ValueError("partitions have different lengths")
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max() + 1, ib.max() + 1))
    np.add.at(table, (ia, ib), 1)
    index = comb(table, 2).sum()
    sa = comb(table.sum(axis=1), 2).sum()
    sb = comb(table.sum(axis=0), 2).sum()
    expected = sa * sb / comb(a.size, 2)
    top = (sa + sb) / 2
    if top == expected:
        return 1.0 if index == expected else 0.0
    return float((index - expected) / (top - expected))


def auc(scores, labels) -> float:
    """Mann-Whitney estimate of P(score of a positive > score of a negative), ties count 1/2."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = labels.sum()
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("both classes must be present")
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def chao_coverage(r) -> float:
    counts = r.counts if isinstance(r, CountMatrix) else np.asarray(r)
    n = counts.sum()
    if n <= 0:
        raise ValueError("no observations")
    f1 = np.sum(counts == 1)
    f2 = np.sum(counts == 2)
    if f1 == 0:
        return 1.0
    return float(1 - f1 / n * (f1 * (n - 1) / (f1 * (n - 1) + 2 * (f2 + 1))))


def connectivity_chao(v, c_hat: float) -> float:
    if c_hat <= 0:
        raise ValueError("coverage must be positive")
    v = np.asarray(v)
    return float(v.sum() / (v.size * c_hat))


def connectivity_coop(result: FitResult, r) -> float:
    """Expected density of the latent support given the counts."""
    return float(np.mean(coop_missing_prob(result, r)))


def nodf(v) -> float:
    """NODF nestedness on a 0-1 scale.

    Every unordered pair of rows (and of columns) contributes the share of the
    poorer line's ones that the richer line also has, or 0 when their totals
    are equal.
    """
    v = (np.asarray(v) > 0).astype(float)
    n1, n2 = v.shape
    if n1 < 2 or n2 < 2:
        raise ValueError("need at least two rows and two columns")

    def paired(x):
        totals = x.sum(axis=1)
        overlap = x @ x.T
        poorer = np.minimum.outer(totals, totals)
        with np.errstate(divide="ignore", invalid="ignore"):
            score = np.where(
                (totals[:, None] != totals[None, :]) & (poorer > 0), overlap / poorer, 0.0
            )
        iu = np.triu_indices(x.shape[0], 1)
        return score[iu].sum()

    n_pairs = n1 * (n1 - 1) / 2 + n2 * (n2 - 1) / 2
    return float((paired(v) + paired(v.T)) / n_pairs)


def modularity_value(v, row_modules, col_modules) -> float:
    """Barber bipartite modularity of a given module assignment."""
    v = np.asarray(v, dtype=float)
    m = v.sum()
    k = v.sum(axis=1)
    d = v.sum(axis=0)
    same = np.asarray(row_modules)[:, None] == np.asarray(col_modules)[None, :]
    return float(((v - np.outer(k, d) / m) * same).sum() / m)


def _lp_sweep(b, k, d, m, row_lab, col_lab, rng):
    """Alternate best-response label updates until modularity stops increasing."""
    best = -np.inf
    while True:
        # columns choose among row labels, rows among column labels
        for side in (1, 0):
            if side == 1:
                src, tgt_deg, src_deg, a = row_lab, d, k, b
            else:
                src, tgt_deg, src_deg, a = col_lab, k, d, b.T
            labs = np.unique(src)
            onehot = src[:, None] == labs[None, :]
            gain = a.T @ onehot - np.outer(tgt_deg, src_deg @ onehot) / m
            pick = gain.max(axis=1, keepdims=True)
            choices = [rng.choice(np.flatnonzero(row == p)) for row, p in zip(gain, pick[:, 0])]
            new = labs[np.array(choices)]
            if side == 1:
                col_lab = new
            else:
                row_lab = new
        q = modularity_value(b, row_lab, col_lab)
        if q <= best + 1e-12:
            return row_lab, col_lab, q
        best = q


def _merge_pass(b, m, k, d, row_lab, col_lab):
    """Merge the pair of modules with the largest positive modularity gain."""
    labs = np.union1d(row_lab, col_lab)
    r1 = row_lab[:, None] == labs[None, :]
    c1 = col_lab[:, None] == labs[None, :]
    e = r1.T.astype(float) @ b @ c1
    kk = k @ r1
    dd = d @ c1
    gain = (e + e.T) / m - (np.outer(kk, dd) + np.outer(dd, kk)) / m**2
    np.fill_diagonal(gain, -np.inf)
    i, j = np.unravel_index(np.argmax(gain), gain.shape)
    if gain[i, j] <= 1e-12:
        return None
    row_lab = np.where(row_lab == labs[j], labs[i], row_lab)
    col_lab = np.where(col_lab == labs[j], labs[i], col_lab)
    return row_lab, col_lab


def _contributions(b, row_lab, col_lab):
    same = row_lab[:, None] == col_lab[None, :]
    return (b * same).sum(axis=1), (b * same).sum(axis=0), same


def _node_moves(b, m, k, d, row_lab, col_lab):
    """Greedy relocation until no move helps.

    Moves are single nodes (to any module or a fresh one) and row-column
    pairs sent together to a fresh module, which escapes optima where a
    lone node gains nothing on its own.
    """
    bm = b - np.outer(k, d) / m
    improved = True
    while improved:
        improved = False
        for side in (0, 1):
            lab, other, a, deg, odeg = (
                (row_lab, col_lab, b, k, d) if side == 0 else (col_lab, row_lab, b.T, d, k)
            )
            labs = np.union1d(lab, other)
            fresh = labs.max() + 1
            cand = np.append(labs, fresh)
            onehot = other[:, None] == cand[None, :]
            gain = a @ onehot - np.outer(deg, odeg @ onehot) / m
            current = gain[np.arange(lab.size), np.searchsorted(cand, lab)]
            best = gain.argmax(axis=1)
            delta = gain[np.arange(lab.size), best] - current
            i = int(np.argmax(delta))
            if delta[i] > 1e-12:
                lab = lab.copy()
                lab[i] = cand[best[i]]
                if side == 0:
                    row_lab = lab
                else:
                    col_lab = lab
                improved = True
        if improved:
            continue
        c_row, c_col, same = _contributions(bm, row_lab, col_lab)
        delta = bm * (1 + same) - c_row[:, None] - c_col[None, :]
        i, j = np.unravel_index(np.argmax(delta), delta.shape)
        if delta[i, j] > 1e-12:
            fresh = max(row_lab.max(), col_lab.max()) + 1
            row_lab = row_lab.copy()
            col_lab = col_lab.copy()
            row_lab[i] = col_lab[j] = fresh
            improved = True
    return row_lab, col_lab


def _respond(gains):
    """Each node joins its best module, or a module of its own when nothing is positive."""
    best = gains.argmax(axis=1)
    return np.where(gains.max(axis=1) > 0, best, -1)


def _response_search(bm, lab):
    """Local search over one side's partition, the other side answering optimally.

    ``bm`` is the modularity matrix with the searched side on columns. A move
    relocates one searched node to another module or a fresh one; the value
    of a partition is the sum over the other side of each node's best
    positive gain.
    """
    lab = np.unique(lab, return_inverse=True)[1]
    onehot = lab[:, None] == np.arange(lab.max() + 1)[None, :]
    gains = bm @ onehot
    value = np.maximum(gains.max(axis=1), 0).sum()
    improved = True
    while improved:
        improved = False
        for j in range(lab.size):
            a = lab[j]
            base = gains.copy()
            base[:, a] -= bm[:, j]
            trial = np.concatenate([base, np.zeros((base.shape[0], 1))], axis=1)
            # value of moving j into module c, for every c including a fresh one
            cand = trial[:, :, None] + np.eye(trial.shape[1])[None, :, :] * bm[:, j][:, None, None]
            values = np.maximum(cand.max(axis=1), 0).sum(axis=0)
            c = int(np.argmax(values))
            if values[c] > value + 1e-12 and c != a:
                if c == gains.shape[1]:
                    gains = np.concatenate([gains, np.zeros((gains.shape[0], 1))], axis=1)
                gains[:, a] -= bm[:, j]
                gains[:, c] += bm[:, j]
                lab[j] = c
                value = values[c]
                improved = True
        keep = np.flatnonzero(np.bincount(lab, minlength=gains.shape[1]) > 0)
        gains = gains[:, keep]
        lab = np.searchsorted(keep, lab)
    return lab, _respond(gains)


def _polish(b, m, k, d, row_lab, col_lab):
    """Alternate exact-response searches over columns and rows until stable."""
    bm = b - np.outer(k, d) / m
    q = modularity_value(b, row_lab, col_lab)
    while True:
        col_lab, rows = _response_search(bm, col_lab)
        row_lab = np.where(rows >= 0, rows, col_lab.max() + 1 + np.arange(rows.size))
        row_lab, cols = _response_search(bm.T, row_lab)
        col_lab = np.where(cols >= 0, cols, row_lab.max() + 1 + np.arange(cols.size))
        new = modularity_value(b, row_lab, col_lab)
        if new <= q + 1e-12:
            return row_lab, col_lab
        q = new


def bipartite_modularity(v, restarts: int = 10, seed=0):
    """Maximise Barber's modularity by label propagation with merging (LPAwb+-style).

    Returns ``(q, (row_modules, col_modules))`` for the best of ``restarts``
    randomised runs; the single-module partition is always a candidate.
    """
    b = (np.asarray(v) > 0).astype(float)
    m = b.sum()
    if m == 0:
        raise ValueError("network has no edges")
    n1, n2 = b.shape
    k, d = b.sum(axis=1), b.sum(axis=0)
    rng = np.random.default_rng(seed)
    best_q = 0.0
    best = (np.zeros(n1, dtype=np.int64), np.zeros(n2, dtype=np.int64))
    best_q = modularity_value(b, *best)
    for _ in range(restarts):
        row_lab = rng.permutation(n1).astype(np.int64)
        col_lab = np.zeros(n2, dtype=np.int64)
        row_lab, col_lab, q = _lp_sweep(b, k, d, m, row_lab, col_lab, rng)
        while True:
            merged = _merge_pass(b, m, k, d, row_lab, col_lab)
            if merged is None:
                break
            row_lab, col_lab, q = _lp_sweep(b, k, d, m, *merged, rng)
        row_lab, col_lab = _node_moves(b, m, k, d, row_lab, col_lab)
        candidates = [_polish(b, m, k, d, row_lab, col_lab)]
        # a random column partition diversifies the starting points
        col_rand = rng.integers(0, rng.integers(1, n2 + 1), n2)
        candidates.append(_polish(b, m, k, d, np.full(n1, n2, dtype=np.int64), col_rand))
        for row_lab, col_lab in candidates:
            q = modularity_value(b, row_lab, col_lab)
            if q > best_q + 1e-12:
                best_q, best = q, (row_lab, col_lab)
    labs, inv = np.unique(np.concatenate(best), return_inverse=True)
    return best_q, (inv[:n1], inv[n1:])


@dataclass(frozen=True)
class CompletionMethod:
    """1: LBM block probabilities, n_miss draws; 2: CoOP Bernoulli; 3: uniform, n_miss draws."""

    kind: int
    n_miss: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in (1, 2, 3):
            raise ValueError("completion kind must be 1, 2 or 3")
        if self.n_miss < 0:
            raise ValueError("n_miss must be non-negative")


def complete_matrix(v, method: CompletionMethod, fit: FitResult | None = None, r=None) -> np.ndarray:
    """Fill unobserved cells of the support according to ``method``.

    Kind 1 needs an LBM fit; kind 2 needs a CoOP fit and the count matrix it
    was fitted on (``r``, defaults to ``v``).
    """
    v = (np.asarray(v) > 0).astype(np.int8)
    rng = np.random.default_rng(method.seed)
    zeros = np.flatnonzero(v.ravel() == 0)
    out = v.ravel().copy()
    if method.kind in (1, 3):
        if method.n_miss > zeros.size:
            raise ValueError(f"n_miss={method.n_miss} exceeds the {zeros.size} zero cells")
        if method.n_miss == 0:
            return v.copy()
        if method.kind == 1:
            if fit is None:
                raise ValueError("completion kind 1 needs an LBM fit")
            z1, z2 = fit.row_clustering.labels, fit.col_clustering.labels
            w = fit.params.pi[np.ix_(z1, z2)].ravel()[zeros]
            picked = rng.choice(zeros, size=method.n_miss, replace=False, p=w / w.sum())
        else:
            picked = rng.choice(zeros, size=method.n_miss, replace=False)
        out[picked] = 1
        return out.reshape(v.shape)
    if fit is None or fit.model != "coop":
        raise ValueError("completion kind 2 needs a CoOP fit")
    p = coop_missing_prob(fit, v if r is None else r).ravel()
    u = rng.random(zeros.size)
    out[zeros[u < p[zeros]]] = 1
    return out.reshape(v.shape)


def rmse(truth, estimate) -> float:
    truth = np.asarray(truth, dtype=float)
    estimate = np.asarray(estimate, dtype=float)
    if truth.shape != estimate.shape:
        raise ValueError("length mismatch")
    return float(np.sqrt(np.mean((truth - estimate) ** 2)))
