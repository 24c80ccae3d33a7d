"""Core types for bipartite count networks, likelihoods and file I/O."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import gammaln

PI_CLAMP = 1e-6


class ParseError(ValueError):
    """Raised when a count matrix file cannot be parsed."""


@dataclass(frozen=True)
class CountMatrix:
    """Observed weighted network R with row/column species names."""

    counts: np.ndarray
    row_names: list[str] = field(default=None)
    col_names: list[str] = field(default=None)

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2 or counts.shape[0] == 0 or counts.shape[1] == 0:
            raise ValueError("counts must be a non-empty 2-d array")
        if not np.issubdtype(counts.dtype, np.integer):
            if not np.all(np.equal(np.mod(counts, 1), 0)):
                raise ValueError("counts must be integers")
        counts = counts.astype(np.int64)
        if np.any(counts < 0):
            raise ValueError("counts must be non-negative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        n1, n2 = counts.shape
        rows = self.row_names or [f"r{i + 1}" for i in range(n1)]
        cols = self.col_names or [f"c{j + 1}" for j in range(n2)]
        if len(rows) != n1 or len(cols) != n2:
            raise ValueError("name lists do not match matrix dimensions")
        object.__setattr__(self, "row_names", list(rows))
        object.__setattr__(self, "col_names", list(cols))

    @property
    def n_rows(self) -> int:
        return self.counts.shape[0]

    @property
    def n_cols(self) -> int:
        return self.counts.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.counts.shape


@dataclass(frozen=True)
class Clustering:
    """Hard block assignment. Labels are 0-based internally."""

    labels: np.ndarray
    n_blocks: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 1:
            raise ValueError("labels must be 1-d")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_blocks):
            raise ValueError("label outside 0..n_blocks-1")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.labels.size

    def onehot(self) -> np.ndarray:
        z = np.zeros((self.labels.size, self.n_blocks))
        z[np.arange(self.labels.size), self.labels] = 1.0
        return z

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_blocks)


@dataclass(frozen=True)
class LbmParams:
    alpha: np.ndarray
    beta: np.ndarray
    pi: np.ndarray

    def vector(self) -> np.ndarray:
        return np.concatenate([self.alpha, self.beta, self.pi.ravel()])


@dataclass(frozen=True)
class CoopParams:
    alpha: np.ndarray
    beta: np.ndarray
    pi: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    g: float

    def rates(self) -> np.ndarray:
        """Poisson intensities lambda_i * mu_j * G."""
        return self.g * np.outer(self.lam, self.mu)

    def vector(self) -> np.ndarray:
        return np.concatenate(
            [self.alpha, self.beta, self.pi.ravel(), self.lam, self.mu, [self.g]]
        )


@dataclass
class FitResult:
    """Outcome of an LBM or CoOP-LBM fit.

    ``observed`` is the support V the model was fitted on; ``m_tilde`` the last
    imputed support of a CoOP chain (None for the LBM).
    """

    model: str
    params: LbmParams | CoopParams
    row_clustering: Clustering
    col_clustering: Clustering
    icl: float = float("nan")
    loglik: float = float("nan")
    trace: list = field(default_factory=list)
    missing_prob: np.ndarray | None = None
    seed: int | None = None
    observed: np.ndarray | None = None
    m_tilde: np.ndarray | None = None
    converged: bool = True
    flags: list = field(default_factory=list)

    @property
    def q(self) -> tuple[int, int]:
        return self.row_clustering.n_blocks, self.col_clustering.n_blocks


def read_count_matrix(path) -> CountMatrix:
    """Read a CSV incidence matrix: header row of column names, first column of row names."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r]
    if len(rows) < 2:
        raise ParseError(f"{path}: need a header row and at least one data row")
    header = rows[0]
    col_names = [c.strip() for c in header[1:]]
    if not col_names:
        raise ParseError(f"{path}: header has no column names")
    row_names, body = [], []
    for i, row in enumerate(rows[1:], start=1):
        if len(row) != len(header):
            raise ParseError(
                f"{path}: row {i} has {len(row) - 1} cells, expected {len(col_names)}"
            )
        row_names.append(row[0].strip())
        values = []
        for j, cell in enumerate(row[1:], start=1):
            text = cell.strip()
            try:
                value = int(text)
            except ValueError:
                raise ParseError(
                    f"{path}: cell at row {i}, column {j} is not an integer: {text!r}"
                ) from None
            if value < 0:
                raise ParseError(f"{path}: cell at row {i}, column {j} is negative: {value}")
            values.append(value)
        body.append(values)
    return CountMatrix(np.array(body, dtype=np.int64), row_names, col_names)


def write_count_matrix(r: CountMatrix, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([""] + list(r.col_names))
        for name, row in zip(r.row_names, r.counts):
            w.writerow([name] + [int(x) for x in row])


def observed_support(r) -> np.ndarray:
    counts = r.counts if isinstance(r, CountMatrix) else np.asarray(r)
    return (counts > 0).astype(np.int8)


def drop_empty(r: CountMatrix):
    """Remove all-zero rows and columns.

    Returns the reduced matrix and the (0-based) indices of the kept rows and
    columns in the original matrix.
    """
    v = r.counts > 0
    rows = np.flatnonzero(v.any(axis=1))
    cols = np.flatnonzero(v.any(axis=0))
    if rows.size == 0:
        raise ValueError("matrix has no positive count; nothing left after dropping empties")
    sub = r.counts[np.ix_(rows, cols)]
    return (
        CountMatrix(
            sub,
            [r.row_names[i] for i in rows],
            [r.col_names[j] for j in cols],
        ),
        rows,
        cols,
    )


def conditional_obs_prob(r, pi_kl, rate):
    """P(R_ij = r | block (k, l)) under the zero-inflated Poisson observation model.

    Works elementwise on arrays. The positive branch is evaluated in log-space.
    """
    r = np.asarray(r)
    pi_kl = np.asarray(pi_kl, dtype=float)
    rate = np.asarray(rate, dtype=float)
    if np.any(rate < 0):
        raise ValueError("rate must be non-negative")
    with np.errstate(divide="ignore", invalid="ignore"):
        logpos = np.log(pi_kl) + xlogy_rate(r, rate) - rate - gammaln(r + 1.0)
        pos = np.exp(logpos)
    zero = 1.0 - pi_kl * (-np.expm1(-rate))
    out = np.where(r > 0, pos, zero)
    return out[()] if out.ndim == 0 else out


def xlogy_rate(r, rate):
    """r * log(rate) with the 0 * log(0) = 0 convention."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(r > 0, r * np.log(rate), 0.0)


def cell_loglik(counts: np.ndarray, pi_cells: np.ndarray, rates: np.ndarray) -> np.ndarray:
    """Per-cell log P(R_ij | blocks) given the block probability of each cell."""
    pos = counts > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        lp = np.where(
            pos,
            np.log(pi_cells) + xlogy_rate(counts, rates) - rates - gammaln(counts + 1.0),
            np.log1p(-pi_cells * -np.expm1(-rates)),
        )
    return lp


def complete_loglik(r, z1: Clustering, z2: Clustering, params: CoopParams) -> float:
    """Complete-data log-likelihood log L(R, Z1, Z2; theta).

    Returns -inf when a block probability of 0 (or 1) contradicts the data.
    """
    counts = r.counts if isinstance(r, CountMatrix) else np.asarray(r)
    if counts.shape != (len(z1), len(z2)):
        raise ValueError("clusterings do not match the matrix dimensions")
    with np.errstate(divide="ignore"):
        ll = np.log(params.alpha)[z1.labels].sum() + np.log(params.beta)[z2.labels].sum()
    pi_cells = params.pi[np.ix_(z1.labels, z2.labels)]
    ll += cell_loglik(counts, pi_cells, params.rates()).sum()
    return float(ll) if not math.isnan(ll) else float("-inf")


def lbm_complete_loglik(v: np.ndarray, z1: Clustering, z2: Clustering, params: LbmParams) -> float:
    """Complete-data log-likelihood of a Bernoulli LBM at hard clusterings."""
    pi_cells = params.pi[np.ix_(z1.labels, z2.labels)]
    with np.errstate(divide="ignore", invalid="ignore"):
        ll = (
            np.log(params.alpha)[z1.labels].sum()
            + np.log(params.beta)[z2.labels].sum()
            + np.where(v > 0, np.log(pi_cells), np.log1p(-pi_cells)).sum()
        )
    return float(ll)


def _floats(a):
    return np.asarray(a, dtype=float).tolist()


def write_fit(result: FitResult, path) -> None:
    """Serialise a fit to JSON. Labels are written 1-based."""
    p = result.params
    doc = {
        "model": result.model,
        "alpha": _floats(p.alpha),
        "beta": _floats(p.beta),
        "pi": _floats(p.pi),
    }
    if result.model == "coop":
        doc["lambda"] = _floats(p.lam)
        doc["mu"] = _floats(p.mu)
        doc["g"] = float(p.g)
    doc.update(
        row_labels=(result.row_clustering.labels + 1).tolist(),
        col_labels=(result.col_clustering.labels + 1).tolist(),
        icl=float(result.icl),
        seed=result.seed,
        missing_prob=None if result.missing_prob is None else _floats(result.missing_prob),
    )
    try:
        with Path(path).open("w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1)
    except OSError as exc:
        raise OSError(f"cannot write fit to {path}: {exc}") from exc


def read_fit(path) -> FitResult:
    with Path(path).open(encoding="utf-8") as fh:
        doc = json.load(fh)
    alpha, beta, pi = (np.array(doc[k], dtype=float) for k in ("alpha", "beta", "pi"))
    if doc["model"] == "coop":
        params = CoopParams(
            alpha, beta, pi, np.array(doc["lambda"]), np.array(doc["mu"]), float(doc["g"])
        )
    else:
        params = LbmParams(alpha, beta, pi)
    mp = doc.get("missing_prob")
    return FitResult(
        model=doc["model"],
        params=params,
        row_clustering=Clustering(np.array(doc["row_labels"]) - 1, alpha.size),
        col_clustering=Clustering(np.array(doc["col_labels"]) - 1, beta.size),
        icl=float(doc["icl"]),
        seed=doc.get("seed"),
        missing_prob=None if mp is None else np.array(mp, dtype=float),
    )
