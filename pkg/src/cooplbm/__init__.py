"""Latent block models for bipartite count networks observed under uneven sampling."""
from .core import (
    Clustering,
    CoopParams,
    CountMatrix,
    FitResult,
    LbmParams,
    complete_loglik,
    conditional_obs_prob,
    drop_empty,
    observed_support,
    read_count_matrix,
    read_fit,
    write_fit,
)
from .lbm import fit_lbm, lbm_icl, lbm_missing_prob, vem_fit
from .selection import SelectionReport, explore
from .sem import (
    SemConfig,
    coop_icl,
    coop_missing_prob,
    fit_sampling_effort,
    init_clustering,
    observed_missing_prob,
    run_sem,
)
from .simulate import SimConfig, simulate_coop, subsample_binomial, subsample_multinomial

__all__ = [
    "Clustering", "CoopParams", "CountMatrix", "FitResult", "LbmParams", "SelectionReport",
    "SemConfig", "SimConfig", "complete_loglik", "conditional_obs_prob", "coop_icl",
    "coop_missing_prob", "drop_empty", "explore", "fit_lbm", "fit_sampling_effort",
    "init_clustering", "lbm_icl", "lbm_missing_prob", "observed_missing_prob",
    "observed_support", "read_count_matrix", "read_fit", "run_sem", "simulate_coop",
    "subsample_binomial", "subsample_multinomial", "vem_fit", "write_fit",
]
__version__ = "0.1.0"
