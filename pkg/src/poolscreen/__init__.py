"""Pooled-screen design, posterior inference and loopy-BP bias correction."""

from .bias import (
    b_tensor_closed,
    b_tensor_direct,
    bias_correction,
    bias_upper_bound,
    design_bias_bound,
)
from .bp import BpOptions, bp_solve
from .design import (
    PoolingDesign,
    BlockDesign,
    benchmark_design,
    catalog_bibd,
    check_near_optimal,
    dualize,
    load_design,
    profile,
    replicate_randomized,
    verify_bibd,
)
from .exact import MarginalVector, exact_marginals
from .harness import ExperimentConfig, format_summary, kl_bernoulli_avg, run_experiment
from .mcmc import ChainOptions, gibbs_marginals
from .model import (
    ObservationModel,
    PriorModel,
    default_observation_model,
    potentials_from_observations,
)

__version__ = "0.1.0"
