"""Compatible Gibbs sampling backend for two-level models with missing cluster covariates."""

from .diagnostics import assess_convergence, geweke_z, posterior_summary, psrf
from .models import (
    DEFAULT_GIBBS_PARAMS,
    DEFAULT_PRIOR_PARAMS,
    DEFAULT_SIMULATION_PARAMS,
    ChainState,
    Dataset,
    GibbsConfig,
    HlmSpec,
    Parameters,
    PriorConfig,
)
from .rng import RngStream
from .sampler import Chain, run_chain, run_chains
from .simulator import apply_missingness, make_design, run_replications, simulate_dataset

__all__ = [
    "DEFAULT_GIBBS_PARAMS",
    "DEFAULT_PRIOR_PARAMS",
    "DEFAULT_SIMULATION_PARAMS",
    "Chain",
    "ChainState",
    "Dataset",
    "GibbsConfig",
    "HlmSpec",
    "Parameters",
    "PriorConfig",
    "RngStream",
    "apply_missingness",
    "assess_convergence",
    "geweke_z",
    "make_design",
    "posterior_summary",
    "psrf",
    "run_chain",
    "run_chains",
    "run_replications",
    "simulate_dataset",
]
