"""Divide-and-conquer MCMC with random-partition-forest surrogates.

Shard chains run Metropolis-Hastings on scaled shard densities, the
proposal/log-density byproduct trains one forest per shard, and the shard
surrogates recombine into a full-posterior approximation either by product
MCMC or by truncated, ESS-pooled importance sampling.
"""

from .baselines import SubchainSet, consensus_combine, kde_product_sample
from .combine import (
    ExactLogDensity,
    LambdaPlan,
    MleSummary,
    WeightedAtoms,
    choose_lambda,
    ess,
    mle_summary_gaussian,
    pool,
    resample,
    rf_is,
    rf_is_weights,
    rf_mh,
    truncate_weights,
)
from .forest import Forest, ForestFormatError, TrainingSet, load_forest, save_forest, train
from .harness import ExperimentConfig, StageError, experiment_config, oracle_full_mcmc, run_experiment
from .metrics import mode_mass, wasserstein1_marginal, wasserstein1_sum
from .model import (
    Dataset,
    Model,
    ShardSpec,
    log_scaled_subposterior,
    log_shard_density,
    make_model,
    read_dataset,
    shard_data,
    write_dataset,
)
from .sampler import ChainOutput, MhConfig, adapt_step, rwmh, thin_retained

__version__ = "0.1.0"
