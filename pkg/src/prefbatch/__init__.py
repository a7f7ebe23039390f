"""Preferential batch Bayesian optimization.

A GP model over a latent objective observed only through batch preference
feedback, with EP/VI/HMC posterior inference, batch acquisition functions,
a sequential optimization loop, a benchmark harness, and an interactive
session service.
"""

from .errors import (
    DegenerateWeights,
    DidNotConverge,
    HistoryTooLarge,
    LengthMismatch,
    NotPSD,
    OutOfDomain,
)
from .gp import (
    GaussianPosterior,
    KernelParams,
    SamplePosterior,
    fit_hyperparams_direct,
    predict,
    prior_cov,
    se_kernel,
)
from .preference import (
    Feedback,
    PreferenceRecord,
    loglik_pairs_mc,
    loglik_winner,
    ove_bound,
    ranking_to_pairs,
    winner_to_pairs,
)

__version__ = "0.1.0"
