"""Federated learning where each client uploads one scalar per round,
plus the verification lab for the underlying projection estimator."""

from .data import DataError, Dataset, Partition, PartitionScheme, accuracy, load_digits, partition
from .estimator_lab import (
    VarianceReport,
    closed_form_covariance,
    exact_rademacher_moments,
    exact_rademacher_second_moment,
    mc_second_moment,
    mc_unbiasedness,
    mc_update_moments,
    project_direction,
)
from .harness import (
    CompareResult,
    ConfigError,
    ExperimentConfig,
    ExperimentResult,
    VerificationReport,
    compare_runs,
    parse_config,
    parse_config_text,
    run_experiment,
    run_verification,
)
from .linalg import axpy, inner, norm_sq, outer
from .model import LabeledSample, MlpSpec, grad, init_params, local_sgd, loss
from .protocol import (
    Algorithm,
    ClientScalar,
    CommLedger,
    DirectionMode,
    RoundRecord,
    ServerState,
    account_bytes,
    fedavg_round,
    fedscalar_round,
)
from .randomness import (
    Direction,
    Distribution,
    RngStream,
    sample_batch,
    sample_client_set,
    sample_direction,
)

__version__ = "0.1.0"
