"""Statistical robustness certification for black-box classifiers.

Per input, the engine samples the (p, eps)-neighbourhood uniformly, queries
the model oracle, and runs exact one-sided binomial tests against the
misprediction tolerance kappa. Per dataset, the certified fraction is turned
into sound lower/upper bounds on Tower robustness, optionally fused with
deterministic certificates.
"""

from .core import (
    Dataset,
    DcCertificateSet,
    NeighbourhoodSpec,
    TestConfig,
    ValidationError,
    load_dataset,
    load_dc_certificates,
    save_dataset,
)
from .stats import (
    BinomTestOutcome,
    ParameterError,
    agresti_coull_lower,
    binom_left_pvalue,
    binom_right_pvalue,
    required_sample_size,
    tower_expectation,
)
from .sampler import Rng, sample_convolved, sample_neighbour
from .certifier import Decision, PerInputResult, certify_dataset, certify_input
from .aggregator import (
    DatasetSummary,
    dc_accuracy,
    estimate_pra,
    pr_bounds,
    summarize,
    test_accuracy,
    tower_lower_bound,
    tower_upper_bound,
)
from .models import LinearModel, MlpModel, load_model, predict, save_model
from .oracle import LocalOracle, ModelOracle, RemoteOracle, TransportError

__all__ = [
    "BinomTestOutcome",
    "Dataset",
    "DatasetSummary",
    "DcCertificateSet",
    "Decision",
    "LinearModel",
    "LocalOracle",
    "MlpModel",
    "ModelOracle",
    "NeighbourhoodSpec",
    "ParameterError",
    "PerInputResult",
    "RemoteOracle",
    "Rng",
    "TestConfig",
    "TransportError",
    "ValidationError",
    "agresti_coull_lower",
    "binom_left_pvalue",
    "binom_right_pvalue",
    "certify_dataset",
    "certify_input",
    "dc_accuracy",
    "estimate_pra",
    "load_dataset",
    "load_dc_certificates",
    "load_model",
    "pr_bounds",
    "predict",
    "required_sample_size",
    "sample_convolved",
    "sample_neighbour",
    "save_dataset",
    "save_model",
    "summarize",
    "test_accuracy",
    "tower_expectation",
    "tower_lower_bound",
    "tower_upper_bound",
]

__version__ = "0.1.0"
