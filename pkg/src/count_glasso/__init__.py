"""Bayesian sparse covariance structure analysis for correlated count data.

A Poisson observation model over latent Gaussian potential risks whose
precision matrix carries a graphical lasso prior, fitted by
Metropolis-Hastings-within-Gibbs MCMC, with posterior summaries,
partial-correlation networks and a spatial-event ingestion pipeline.
"""

from .bgl import ScatterMatrix, bgl_sweep, update_lambda, update_omega_column, update_tau
from .distributions import (
    MvtProposal,
    RngStream,
    logpdf_mvt,
    sample_gamma,
    sample_inverse_gaussian,
    sample_mvn,
    sample_mvt,
)
from .driver import RunConfig, fit, initial_state, load_counts, save_trace, save_traces
from .errors import (
    ConfigError,
    CountGlassoError,
    DataError,
    NumericError,
    ValidationError,
)
from .geweke import geweke_check
from .model import (
    ChainState,
    CountMatrix,
    Hyperparameters,
    PrecisionMatrix,
    RiskState,
    log_joint,
    log_joint_parts,
    validate_positive_definite,
)
from .posterior import (
    EdgeSet,
    Summary,
    Trace,
    credible_interval,
    effective_sample_size,
    hpd_interval,
    map_sample,
    partial_correlation,
    summarize,
    threshold_top_q,
)
from .risk import (
    ConditionalEval,
    MhOutcome,
    mh_update,
    mu_conditional,
    newton_mode,
    risk_sweep,
    z_conditional,
)
from .synthetic import PRESETS, SynthConfig, generate_dataset, make_true_precision

__version__ = "0.1.0"
