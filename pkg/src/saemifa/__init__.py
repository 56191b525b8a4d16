"""SAEM exploratory item factor analysis with random-matrix factor retention."""

from .distributions import RngStream
from .engine import (
    FitResult,
    compute_fit_statistics,
    default_schedule,
    fit,
    initialize,
)
from .model import (
    ConvergenceConfig,
    GainSchedule,
    ItemParameters,
    LatentAbilities,
    ResponseMatrix,
    category_probabilities,
    validate_response_matrix,
)
from .scores import eap_scores, sampled_scores
from .simulation import (
    CONDITIONS,
    ConditionSpec,
    condition,
    generate_parameters,
    generate_responses,
    run_condition,
)
from .spectral import (
    mp_density,
    retain_dimensions,
    sample_wishart_eigenvalues,
    significant_eigenvalues,
    tw_cdf,
    tw_quantile,
    tw_scaling,
)
from .standard_errors import ErrorReport, estimate_hessian_errors, mcmc_chain_errors

__version__ = "0.1.0"

__all__ = [
    "CONDITIONS",
    "ConditionSpec",
    "ConvergenceConfig",
    "ErrorReport",
    "FitResult",
    "GainSchedule",
    "ItemParameters",
    "LatentAbilities",
    "ResponseMatrix",
    "RngStream",
    "category_probabilities",
    "compute_fit_statistics",
    "condition",
    "default_schedule",
    "eap_scores",
    "estimate_hessian_errors",
    "fit",
    "generate_parameters",
    "generate_responses",
    "initialize",
    "mcmc_chain_errors",
    "mp_density",
    "retain_dimensions",
    "run_condition",
    "sample_wishart_eigenvalues",
    "sampled_scores",
    "significant_eigenvalues",
    "tw_cdf",
    "tw_quantile",
    "tw_scaling",
    "validate_response_matrix",
]
