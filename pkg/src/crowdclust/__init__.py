"""Crowdsourced label aggregation with nonparametric annotator clustering.

Four estimators share one surface: majority voting, the independent
confusion-matrix model (ibcc), the clustered model with shared per-cluster
confusions under a CRP prior (cbcc), and its hierarchical extension with
per-user confusions tied through cluster-level priors (hcbcc).
"""

from .data import (
    NEW_CLUSTER,
    ClusterParams,
    CountTensor,
    GibbsState,
    Hyperparameters,
    LabelMatrix,
    Partition,
    build_counts,
    validate_ground_truth,
)
from .errors import FeasibilityError, ValidationError
from .gibbs import (
    ChainConfig,
    CbccChain,
    HcbccChain,
    IbccChain,
    SampleRecord,
    gibbs_sweep_cbcc,
    gibbs_sweep_hcbcc,
    majority_vote,
    run_chain,
    sample_alpha,
)
from .likelihoods import (
    ModelKind,
    log_collapsed_likelihood_cbcc,
    log_collapsed_likelihood_hcbcc,
    log_collapsed_z_prior,
    log_crp_partition,
    prior_correlation_cbcc,
)
from .posterior import (
    PosteriorSummary,
    accuracy,
    empirical_posterior,
    enumerate_posterior_cbcc,
    improvement_curve,
    summarize,
    total_variation,
)
from .special import (
    LogStirlingTable,
    log_gamma,
    log_rising_factorial,
    sample_antoniak,
    sample_antoniak_batch,
    sample_beta,
    sample_categorical_log,
    sample_dirichlet,
    sample_gamma,
)
from .synthetic import PRESET_NAMES, PopulationSpec, SimulationResult, mask, preset, simulate

__version__ = "0.1.0"
