"""Stochastic, federated and diffusion optimizers with saddle-escape instrumentation."""

__version__ = "0.1.0"

from .errors import ConfigurationError, ConvergenceError, DivergenceError, UnsupportedConfiguration
from .graph import CombinationMatrix, combination_matrix, mixing_rate, perron_vector
from .landscape import ClassifierConfig, classify, escape_time_bound, arrival_budget, symmetric_eigen
from .oracle import (
    cb_constant,
    exact_oracle,
    federated_oracle,
    minibatch_oracle,
    perturbed_oracle,
    sgd_oracle,
)
from .risk import RiskFunction, logistic_net_risk, quadratic_saddle
from .strategies import TrajectoryRecord, run_centralized, run_diffusion, run_federated
from .verify import MonteCarloPlan

__all__ = [
    "ClassifierConfig",
    "CombinationMatrix",
    "ConfigurationError",
    "ConvergenceError",
    "DivergenceError",
    "MonteCarloPlan",
    "RiskFunction",
    "TrajectoryRecord",
    "UnsupportedConfiguration",
    "arrival_budget",
    "cb_constant",
    "classify",
    "combination_matrix",
    "escape_time_bound",
    "exact_oracle",
    "federated_oracle",
    "logistic_net_risk",
    "minibatch_oracle",
    "mixing_rate",
    "perron_vector",
    "perturbed_oracle",
    "quadratic_saddle",
    "run_centralized",
    "run_diffusion",
    "run_federated",
    "sgd_oracle",
    "symmetric_eigen",
]
