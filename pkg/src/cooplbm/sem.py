"""Stochastic EM for the CoOP-LBM.

One iteration runs, in order: mixing proportions from the labels, sampling
efforts by fixed point given the imputed support, imputation of the support,
block probabilities from the imputed support, then row and column labels.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.cluster.hierarchy import cut_tree, linkage
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import pdist
from sklearn.cluster import KMeans

from .core import (
    PI_CLAMP,
    Clustering,
    CoopParams,
    CountMatrix,
    FitResult,
    complete_loglik,
    observed_support,
)

INIT_METHODS = ("hierarchical", "spectral", "kmeans")
MIX_FLOOR = 1e-6


@dataclass(frozen=True)
class SemConfig:
    burn_in: int = 50
    post_iter: int = 50
    eps: float = 1e-4
    fp_tol: float = 1e-8
    fp_max_iter: int = 100
    seed: int = 0
    restarts: int = 3
    init: str = "hierarchical"

    def __post_init__(self):
        if self.burn_in < 0 or self.post_iter < 1 or self.restarts < 1:
            raise ValueError("iteration and restart counts must be positive")
        if self.eps <= 0 or self.fp_tol <= 0 or self.fp_max_iter < 1:
            raise ValueError("tolerances must be positive")
        if self.init not in INIT_METHODS:
            raise ValueError(f"unknown init method {self.init!r}")


class EffortEstimate(NamedTuple):
    lam: np.ndarray
    mu: np.ndarray
    g: float
    converged: bool


def _counts(r) -> np.ndarray:
    return r.counts if isinstance(r, CountMatrix) else np.asarray(r)


# ---------------------------------------------------------------- initialisation


def _cluster_profiles(x: np.ndarray, q: int, method: str, seed) -> np.ndarray:
    n = x.shape[0]
    if q == 1:
        return np.zeros(n, dtype=np.int64)
    if q == n:
        return np.arange(n)
    if method == "hierarchical":
        tree = linkage(pdist(x, "cityblock"), method="ward")
        return cut_tree(tree, n_clusters=q).ravel().astype(np.int64)
    km = KMeans(n_clusters=q, init="k-means++", n_init=10, random_state=seed)
    with warnings.catch_warnings():
        # duplicate binary profiles may yield fewer distinct clusters than q
        warnings.simplefilter("ignore")
        return km.fit_predict(x).astype(np.int64)


def _spectral_embedding(v: np.ndarray, q1: int, q2: int):
    v = v.astype(float)
    d1 = v.sum(axis=1)
    d2 = v.sum(axis=0)
    d1[d1 == 0] = 1.0
    d2[d2 == 0] = 1.0
    a = v / np.sqrt(d1)[:, None] / np.sqrt(d2)[None, :]
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    return u[:, :q1] * s[:q1], vt[:q2].T * s[:q2]


def init_clustering(r, q1: int, q2: int, method: str = "hierarchical", seed=0):
    """Initial row and column clusterings of the binarised matrix."""
    v = observed_support(r).astype(float)
    n1, n2 = v.shape
    if not (1 <= q1 <= n1 and 1 <= q2 <= n2):
        raise ValueError(f"cannot form ({q1}, {q2}) blocks on a {n1} x {n2} matrix")
    if method not in INIT_METHODS:
        raise ValueError(f"unknown init method {method!r}")
    if method == "spectral":
        xr, xc = _spectral_embedding(v, q1, q2)
        z1 = _cluster_profiles(xr, q1, "kmeans", seed)
        z2 = _cluster_profiles(xc, q2, "kmeans", seed)
    else:
        z1 = _cluster_profiles(v, q1, method, seed)
        z2 = _cluster_profiles(v.T, q2, method, seed)
    return Clustering(z1, q1), Clustering(z2, q2)


# ---------------------------------------------------------------- M-steps


def _proportions(c: Clustering) -> np.ndarray:
    p = c.sizes() / len(c)
    p = np.maximum(p, MIX_FLOOR)
    return p / p.sum()


def mstep_mixing(z1: Clustering, z2: Clustering):
    """Block proportions, floored at 1e-6 and renormalised."""
    return _proportions(z1), _proportions(z2)


def fit_sampling_effort(r, m, fp_tol: float = 1e-8, fp_max_iter: int = 100, start=None) -> EffortEstimate:
    """Maximum-likelihood (lambda, mu, G) of the Poisson layer given a support m.

    Alternates G*mu_l = colsum_l / sum_i m_il lambda_i and
    lambda_k = rowsum_k / sum_j m_kj G*mu_j, rescaling lambda to max 1 at each
    step (the map is scale-free). ``start`` defaults to all ones.
    """
    counts = _counts(r).astype(float)
    m = np.asarray(m, dtype=float)
    if np.any(m.sum(axis=1) == 0) or np.any(m.sum(axis=0) == 0):
        raise ValueError("support has an empty row or column")
    rs = counts.sum(axis=1)
    cs = counts.sum(axis=0)
    lam = np.ones(counts.shape[0]) if start is None else np.asarray(start, dtype=float)
    converged = False
    for _ in range(fp_max_iter):
        gmu = cs / (m.T @ lam)
        new = rs / (m @ gmu)
        new /= new.max()
        delta = np.max(np.abs(new - lam))
        lam = new
        if delta < fp_tol:
            converged = True
            break
    gmu = cs / (m.T @ lam)
    g = gmu.max()
    return EffortEstimate(lam, gmu / g, float(g), converged)


def mstep_pi(m_tilde, z1: Clustering, z2: Clustering, previous=None) -> np.ndarray:
    """Block means of the imputed support, clamped to [1e-6, 1 - 1e-6].

    Blocks with no cell keep their ``previous`` value (0.5 if none given).
    """
    m_tilde = np.asarray(m_tilde, dtype=float)
    sums = z1.onehot().T @ m_tilde @ z2.onehot()
    sizes = np.outer(z1.sizes(), z2.sizes())
    if previous is None:
        previous = np.full(sizes.shape, 0.5)
    with np.errstate(invalid="ignore", divide="ignore"):
        pi = np.where(sizes > 0, sums / np.maximum(sizes, 1), previous)
    return np.clip(pi, PI_CLAMP, 1 - PI_CLAMP)


# ---------------------------------------------------------------- S-steps


def missing_given_zero(pi_cells, rates):
    """P(M_ij = 1 | R_ij = 0) for the given block probabilities and rates."""
    present_unseen = pi_cells * np.exp(-rates)
    return present_unseen / (1.0 - pi_cells * -np.expm1(-rates))


def sstep_impute_support(r, z1: Clustering, z2: Clustering, params: CoopParams, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    counts = _counts(r)
    p = missing_given_zero(params.pi[np.ix_(z1.labels, z2.labels)], params.rates())
    draw = rng.random(counts.shape) < p
    return np.where(counts > 0, 1, draw).astype(np.int8)


def label_logweights(counts, pi, weights, rates, other_labels) -> np.ndarray:
    """Unnormalised log posterior of each row's block, columns' blocks given.

    The Poisson factor of positive cells does not depend on the row block and
    is left out.
    """
    pos = counts > 0
    seen = -np.expm1(-rates)
    out = np.empty((counts.shape[0], pi.shape[0]))
    with np.errstate(divide="ignore"):
        for k in range(pi.shape[0]):
            pik = pi[k, other_labels][None, :]
            out[:, k] = np.where(pos, np.log(pik), np.log1p(-pik * seen)).sum(axis=1)
        out += np.log(weights)[None, :]
    return out


def _sample_categorical(logw: np.ndarray, rng) -> np.ndarray:
    if np.any(~np.isfinite(logw.max(axis=1))):
        raise FloatingPointError("a node has zero posterior weight for every block")
    w = np.exp(logw - logw.max(axis=1, keepdims=True))
    cdf = np.cumsum(w, axis=1)
    u = rng.random(logw.shape[0]) * cdf[:, -1]
    return np.minimum((cdf < u[:, None]).sum(axis=1), logw.shape[1] - 1)


def sstep_sample_labels(r, params: CoopParams, z_other: Clustering, seed, axis: int = 0) -> Clustering:
    """Draw row labels (axis=0) given column labels, or column labels (axis=1) given rows."""
    rng = np.random.default_rng(seed)
    counts = _counts(r)
    rates = params.rates()
    if axis == 0:
        logw = label_logweights(counts, params.pi, params.alpha, rates, z_other.labels)
        q = params.alpha.size
    else:
        logw = label_logweights(counts.T, params.pi.T, params.beta, rates.T, z_other.labels)
        q = params.beta.size
    return Clustering(_sample_categorical(logw, rng), q)


# ---------------------------------------------------------------- label switching


def align_labels(new: Clustering, ref: Clustering) -> Clustering:
    """Relabel ``new`` to maximise its overlap with ``ref`` (Hungarian assignment)."""
    q = new.n_blocks
    conf = np.zeros((q, q))
    np.add.at(conf, (new.labels, ref.labels), 1)
    rows, cols = linear_sum_assignment(-conf)
    perm = np.empty(q, dtype=np.int64)
    perm[rows] = cols
    return Clustering(perm[new.labels], q)


def _majority(votes: np.ndarray) -> np.ndarray:
    return np.argmax(votes, axis=1)


def _normalised(alpha, beta, pi, lam, mu, g) -> CoopParams:
    a, b = lam.max(), mu.max()
    return CoopParams(
        alpha / alpha.sum(),
        beta / beta.sum(),
        np.clip(pi, PI_CLAMP, 1 - PI_CLAMP),
        lam / a,
        mu / b,
        float(g * a * b),
    )


# ---------------------------------------------------------------- the chain


def _run_chain(counts, z1, z2, config: SemConfig, rng, callback=None):
    n1, n2 = counts.shape
    q1, q2 = z1.n_blocks, z2.n_blocks
    v = (counts > 0).astype(np.int8)
    m_t = v.copy()
    pi = mstep_pi(v, z1, z2)
    votes1 = np.zeros((n1, q1))
    votes2 = np.zeros((n2, q2))
    trace = []
    total = None
    mean = None
    n_post = 0
    converged = False
    flags = set()
    for it in range(config.burn_in + config.post_iter):
        alpha, beta = mstep_mixing(z1, z2)
        eff = fit_sampling_effort(counts, m_t, config.fp_tol, config.fp_max_iter)
        if not eff.converged:
            flags.add("effort_fixed_point_not_converged")
        params = CoopParams(alpha, beta, pi, eff.lam, eff.mu, eff.g)
        m_t = sstep_impute_support(counts, z1, z2, params, rng)
        if np.any(z1.sizes() == 0) or np.any(z2.sizes() == 0):
            flags.add("empty_block")
        pi = mstep_pi(m_t, z1, z2, previous=pi)
        params = CoopParams(alpha, beta, pi, eff.lam, eff.mu, eff.g)
        if callback is not None:
            callback(it, z1, z2, params, m_t)
        trace.append(
            {"iter": it, "theta": params.vector(), "loglik": complete_loglik(counts, z1, z2, params)}
        )
        new_z1 = align_labels(sstep_sample_labels(counts, params, z2, rng, axis=0), z1)
        new_z2 = align_labels(sstep_sample_labels(counts, params, new_z1, rng, axis=1), z2)
        z1, z2 = new_z1, new_z2
        if it < config.burn_in:
            continue
        n_post += 1
        votes1[np.arange(n1), z1.labels] += 1
        votes2[np.arange(n2), z2.labels] += 1
        theta = params.vector()
        total = theta.copy() if total is None else total + theta
        new_mean = total / n_post
        if mean is not None and np.linalg.norm(new_mean - mean) < config.eps:
            mean = new_mean
            converged = True
            break
        mean = new_mean

    sizes = np.cumsum([q1, q2, q1 * q2, n1, n2])
    a, b, p, lam, mu, g = np.split(mean, sizes)
    avg = _normalised(a, b, p.reshape(q1, q2), lam, mu, g[0])
    hard1 = Clustering(_majority(votes1), q1)
    hard2 = Clustering(_majority(votes2), q2)
    return avg, hard1, hard2, m_t, trace, converged, sorted(flags)


def run_sem(r, q1: int, q2: int, config: SemConfig = SemConfig(), init=None, callback=None) -> FitResult:
    """Fit a CoOP-LBM with (q1, q2) blocks; best of ``config.restarts`` chains.

    ``init`` optionally fixes the starting clusterings for every restart;
    otherwise restart k starts from the k-th initialisation method in turn,
    beginning with ``config.init``. ``callback(iteration, z1, z2, params,
    m_tilde)`` is called once per iteration of every chain.
    """
    counts = _counts(r)
    if np.any(~(counts > 0).any(axis=1)) or np.any(~(counts > 0).any(axis=0)):
        raise ValueError("matrix has empty rows or columns; apply drop_empty first")
    methods = [config.init] + [m for m in INIT_METHODS if m != config.init]
    best = None
    for k in range(config.restarts):
        rng = np.random.default_rng([config.seed, k])
        if init is not None:
            z1, z2 = init
        else:
            z1, z2 = init_clustering(counts, q1, q2, methods[k % len(methods)], seed=config.seed + k)
        avg, hard1, hard2, m_t, trace, converged, flags = _run_chain(counts, z1, z2, config, rng, callback)
        ll = complete_loglik(counts, hard1, hard2, avg)
        if best is None or ll > best.loglik:
            best = FitResult(
                model="coop",
                params=avg,
                row_clustering=hard1,
                col_clustering=hard2,
                loglik=ll,
                trace=trace,
                seed=config.seed,
                observed=(counts > 0).astype(np.int8),
                m_tilde=m_t,
                converged=converged,
                flags=flags + [f"restart={k}"],
            )
    best.missing_prob = coop_missing_prob(best, counts)
    best.icl = coop_icl(best, counts, config)
    return best


# ---------------------------------------------------------------- derived quantities


def coop_missing_prob(result: FitResult, r) -> np.ndarray:
    """P(M_ij = 1 | R_ij) at the fitted parameters and hard labels."""
    counts = _counts(r)
    p = result.params
    pi_cells = p.pi[np.ix_(result.row_clustering.labels, result.col_clustering.labels)]
    return np.where(counts > 0, 1.0, missing_given_zero(pi_cells, p.rates()))


def observed_missing_prob(result: FitResult) -> np.ndarray:
    """P(R_ij > 0) = pi_kl (1 - exp(-lambda_i mu_j G)) at the fitted parameters."""
    p = result.params
    pi_cells = p.pi[np.ix_(result.row_clustering.labels, result.col_clustering.labels)]
    return pi_cells * -np.expm1(-p.rates())


def coop_penalty(q1: int, q2: int, n1: int, n2: int) -> float:
    return (
        (q1 - 1) / 2 * np.log(n1)
        + (q2 - 1) / 2 * np.log(n2)
        + (q1 * q2 + n1 + n2 - 1) / 2 * np.log(n1 * n2)
    )


def maximise_given_labels(
    result: FitResult, r, config: SemConfig = SemConfig(), max_iter: int = 100, tol: float = 1e-8
) -> CoopParams:
    """Maximise log L(R, Z1, Z2; theta) over theta at the fit's hard clusterings.

    With labels fixed the cells are independent zero-inflated Poisson draws,
    so EM over the latent support is exact: the E-step is P(M=1 | R), the
    M-step takes block means for pi and the effort fixed point on the
    expected support. Starts from the fit's parameters; never decreases the
    objective.
    """
    counts = _counts(r)
    z1, z2 = result.row_clustering, result.col_clustering
    alpha, beta = mstep_mixing(z1, z2)
    p = result.params
    params = CoopParams(alpha, beta, p.pi, p.lam, p.mu, p.g)
    ll = complete_loglik(counts, z1, z2, params)
    for _ in range(max_iter):
        pi_cells = params.pi[np.ix_(z1.labels, z2.labels)]
        expected = np.where(counts > 0, 1.0, missing_given_zero(pi_cells, params.rates()))
        pi = mstep_pi(expected, z1, z2, previous=params.pi)
        eff = fit_sampling_effort(counts, expected, config.fp_tol, config.fp_max_iter)
        params = CoopParams(alpha, beta, pi, eff.lam, eff.mu, eff.g)
        new = complete_loglik(counts, z1, z2, params)
        if new - ll < tol * abs(ll):
            break
        ll = new
    return params


def coop_icl(result: FitResult, r, config: SemConfig = SemConfig()) -> float:
    """Integrated classification likelihood of a CoOP fit at its hard clusterings."""
    counts = _counts(r)
    z1, z2 = result.row_clustering, result.col_clustering
    ll = max(
        complete_loglik(counts, z1, z2, result.params),
        complete_loglik(counts, z1, z2, maximise_given_labels(result, counts, config)),
    )
    n1, n2 = counts.shape
    return float(ll - coop_penalty(z1.n_blocks, z2.n_blocks, n1, n2))
