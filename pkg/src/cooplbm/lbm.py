"""Bernoulli latent block model fitted by variational EM on the observed support."""
from __future__ import annotations

import numpy as np

from .core import PI_CLAMP, Clustering, FitResult, LbmParams, lbm_complete_loglik
from .sem import INIT_METHODS, init_clustering, mstep_mixing, mstep_pi

TAU_FLOOR = 1e-10


def _floor_normalise(tau):
    tau = np.maximum(tau, TAU_FLOOR)
    return tau / tau.sum(axis=1, keepdims=True)


def _softmax_rows(logw):
    w = np.exp(logw - logw.max(axis=1, keepdims=True))
    return _floor_normalise(w / w.sum(axis=1, keepdims=True))


def _mstep(v, tau1, tau2):
    alpha = np.maximum(tau1.mean(axis=0), 1e-6)
    beta = np.maximum(tau2.mean(axis=0), 1e-6)
    num = tau1.T @ v @ tau2
    den = np.outer(tau1.sum(axis=0), tau2.sum(axis=0))
    pi = np.where(den > 0, num / np.maximum(den, 1e-300), 0.5)
    return alpha / alpha.sum(), beta / beta.sum(), np.clip(pi, PI_CLAMP, 1 - PI_CLAMP)


def elbo(v, tau1, tau2, alpha, beta, pi) -> float:
    """Evidence lower bound of the mean-field approximation."""
    lp, lq = np.log(pi), np.log1p(-pi)
    data = np.sum(tau1 * ((v @ tau2) @ lp.T + ((1 - v) @ tau2) @ lq.T))
    return float(
        data
        + tau1.sum(axis=0) @ np.log(alpha)
        + tau2.sum(axis=0) @ np.log(beta)
        - np.sum(tau1 * np.log(tau1))
        - np.sum(tau2 * np.log(tau2))
    )


def vem_fit(v, q1: int, q2: int, init=None, max_iter: int = 200, tol: float = 1e-6, seed=0) -> FitResult:
    """Variational EM for the binary LBM starting from hard clusterings ``init``."""
    v = np.asarray(v, dtype=float)
    n1, n2 = v.shape
    if q1 > n1 or q2 > n2:
        raise ValueError(f"cannot form ({q1}, {q2}) blocks on a {n1} x {n2} matrix")
    if init is None:
        init = init_clustering(v, q1, q2, "hierarchical", seed)
    tau1 = _floor_normalise(init[0].onehot())
    tau2 = _floor_normalise(init[1].onehot())
    alpha, beta, pi = _mstep(v, tau1, tau2)
    trace = [{"iter": 0, "elbo": elbo(v, tau1, tau2, alpha, beta, pi)}]
    converged = False
    for it in range(1, max_iter + 1):
        lp, lq = np.log(pi), np.log1p(-pi)
        tau1 = _softmax_rows(np.log(alpha) + (v @ tau2) @ lp.T + ((1 - v) @ tau2) @ lq.T)
        tau2 = _softmax_rows(np.log(beta) + (v.T @ tau1) @ lp + ((1 - v).T @ tau1) @ lq)
        alpha, beta, pi = _mstep(v, tau1, tau2)
        value = elbo(v, tau1, tau2, alpha, beta, pi)
        prev = trace[-1]["elbo"]
        trace.append({"iter": it, "elbo": value})
        if abs(value - prev) < tol * abs(prev):
            converged = True
            break
    z1 = Clustering(tau1.argmax(axis=1), q1)
    z2 = Clustering(tau2.argmax(axis=1), q2)
    flags = []
    if np.any(z1.sizes() == 0) or np.any(z2.sizes() == 0):
        flags.append("empty_block")
    result = FitResult(
        model="lbm",
        params=LbmParams(alpha, beta, pi),
        row_clustering=z1,
        col_clustering=z2,
        loglik=trace[-1]["elbo"],
        trace=trace,
        seed=seed,
        observed=v.astype(np.int8),
        converged=converged,
        flags=flags,
    )
    result.missing_prob = lbm_missing_prob(result)
    result.icl = lbm_icl(result, v)
    return result


def fit_lbm(v, q1: int, q2: int, seed=0, restarts: int = 3, init=None, **kw) -> FitResult:
    """Best-ELBO VEM fit over initialisations (cycling through the init methods)."""
    best = None
    for k in range(restarts):
        start = init if init is not None else init_clustering(
            v, q1, q2, INIT_METHODS[k % len(INIT_METHODS)], seed + k
        )
        res = vem_fit(v, q1, q2, init=start, seed=seed, **kw)
        if best is None or res.loglik > best.loglik:
            best = res
        if init is not None:
            break
    return best


def lbm_penalty(q1: int, q2: int, n1: int, n2: int) -> float:
    return (q1 - 1) / 2 * np.log(n1) + (q2 - 1) / 2 * np.log(n2) + q1 * q2 / 2 * np.log(n1 * n2)


def lbm_icl(result: FitResult, v) -> float:
    """Classical binary-LBM ICL at the hard clusterings (parameters re-estimated on them)."""
    v = np.asarray(v)
    z1, z2 = result.row_clustering, result.col_clustering
    alpha, beta = mstep_mixing(z1, z2)
    pi = mstep_pi(v, z1, z2, previous=result.params.pi)
    ll = lbm_complete_loglik(v, z1, z2, LbmParams(alpha, beta, pi))
    n1, n2 = v.shape
    return float(ll - lbm_penalty(z1.n_blocks, z2.n_blocks, n1, n2))


def lbm_missing_prob(result: FitResult) -> np.ndarray:
    """Block connection probability on unobserved cells, 1 on observed ones."""
    pi_cells = result.params.pi[np.ix_(result.row_clustering.labels, result.col_clustering.labels)]
    if result.observed is None:
        return pi_cells
    return np.where(result.observed > 0, 1.0, pi_cells)
