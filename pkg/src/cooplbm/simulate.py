"""Synthetic CoOP-LBM networks and sub-sampling schemes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Clustering, CountMatrix, drop_empty

MAX_RETRIES = 100

PAPER_PI = np.array(
    [
        [0.95, 0.75, 0.50],
        [0.75, 0.50, 0.50],
        [0.50, 0.50, 0.05],
    ]
)


@dataclass(frozen=True)
class SimConfig:
    """Generative parameters.

    Efforts are either drawn i.i.d. from Beta(a, b) (``effort_shape``) or given
    explicitly (``lam``/``mu``); explicit vectors take precedence.
    """

    n1: int
    n2: int
    alpha: tuple
    beta: tuple
    pi: np.ndarray
    g: float
    effort_shape: tuple = (0.3, 1.5)
    lam: np.ndarray | None = None
    mu: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float)
        beta = np.asarray(self.beta, dtype=float)
        pi = np.asarray(self.pi, dtype=float)
        for name, v in (("alpha", alpha), ("beta", beta)):
            if np.any(v < 0) or abs(v.sum() - 1) > 1e-9:
                raise ValueError(f"{name} must be a probability vector")
        if pi.shape != (alpha.size, beta.size) or np.any((pi < 0) | (pi > 1)):
            raise ValueError("pi must be a Q1 x Q2 grid of probabilities")
        if self.g <= 0:
            raise ValueError("g must be positive")
        if self.lam is None or self.mu is None:
            a, b = self.effort_shape
            if a <= 0 or b <= 0:
                raise ValueError("beta-law shapes must be positive")
        if self.lam is not None and len(self.lam) != self.n1:
            raise ValueError("lam must have n1 entries")
        if self.mu is not None and len(self.mu) != self.n2:
            raise ValueError("mu must have n2 entries")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "pi", pi)


def paper_config(n: int = 100, g: float = 600.0, seed: int = 0) -> SimConfig:
    """Three-block setting used throughout the simulation study."""
    third = np.full(3, 1 / 3)
    return SimConfig(n, n, third, third, PAPER_PI, g, (0.3, 1.5), seed=seed)


def motivating_config(n: int = 60, pi: float = 0.5, g: float = 10.0, seed: int = 0) -> SimConfig:
    """Unstructured (single-block) network observed with heterogeneous uniform efforts.

    With efforts ~ U(0, 1) and G = 10 about 70% of the possible interactions
    are observed.
    """
    return SimConfig(n, n, (1.0,), (1.0,), np.array([[pi]]), g, (1.0, 1.0), seed=seed)


@dataclass(frozen=True)
class SimOutput:
    m: np.ndarray
    n: np.ndarray
    r: CountMatrix
    true_z1: Clustering
    true_z2: Clustering
    true_lambda: np.ndarray
    true_mu: np.ndarray
    true_g: float
    kept_rows: np.ndarray
    kept_cols: np.ndarray
    m_full: np.ndarray  # latent support before empty rows/columns are discarded


def _beta_draw(rng, a, b, size):
    x = rng.gamma(a, size=size)
    y = rng.gamma(b, size=size)
    return x / (x + y)


def _efforts(rng, explicit, shape, size):
    if explicit is not None:
        v = np.asarray(explicit, dtype=float)
    else:
        v = _beta_draw(rng, shape[0], shape[1], size)
    return v / v.max()


def simulate_coop(config: SimConfig) -> SimOutput:
    """Draw (Z1, Z2, M, N) and R = M * N, then drop empty rows/columns.

    Effort vectors restricted to the kept species are renormalised to a
    maximum of 1, with G rescaled so every rate lambda_i mu_j G is unchanged.
    """
    rng = np.random.default_rng(config.seed)
    for _ in range(MAX_RETRIES):
        z1 = rng.choice(config.alpha.size, size=config.n1, p=config.alpha)
        z2 = rng.choice(config.beta.size, size=config.n2, p=config.beta)
        m = (rng.random((config.n1, config.n2)) < config.pi[np.ix_(z1, z2)]).astype(np.int8)
        lam = _efforts(rng, config.lam, config.effort_shape, config.n1)
        mu = _efforts(rng, config.mu, config.effort_shape, config.n2)
        n = rng.poisson(config.g * np.outer(lam, mu))
        counts = m * n
        if counts.any():
            break
    else:
        raise RuntimeError(f"all simulated counts were zero after {MAX_RETRIES} attempts")
    r, rows, cols = drop_empty(CountMatrix(counts))
    lam_k, mu_k = lam[rows], mu[cols]
    g_eff = config.g * lam_k.max() * mu_k.max()
    return SimOutput(
        m=m[np.ix_(rows, cols)],
        n=n[np.ix_(rows, cols)],
        r=r,
        true_z1=Clustering(z1[rows], config.alpha.size),
        true_z2=Clustering(z2[cols], config.beta.size),
        true_lambda=lam_k / lam_k.max(),
        true_mu=mu_k / mu_k.max(),
        true_g=float(g_eff),
        kept_rows=rows,
        kept_cols=cols,
        m_full=m,
    )


def subsample_multinomial(r: CountMatrix, keep_fraction: float, seed) -> CountMatrix:
    """Redraw round(keep_fraction * total) observations from the empirical cell frequencies."""
    if not 0 < keep_fraction <= 1:
        raise ValueError("keep_fraction must lie in (0, 1]")
    total = int(r.counts.sum())
    if total <= 0:
        raise ValueError("matrix has no observations")
    rng = np.random.default_rng(seed)
    size = int(round(keep_fraction * total))
    draw = rng.multinomial(size, r.counts.ravel() / total)
    return CountMatrix(draw.reshape(r.shape), r.row_names, r.col_names)


def subsample_binomial(r: CountMatrix, p: float, seed) -> CountMatrix:
    """Thin every cell independently: R_ij -> Binomial(R_ij, p)."""
    if not 0 < p <= 1:
        raise ValueError("p must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    return CountMatrix(rng.binomial(r.counts, p), r.row_names, r.col_names)
