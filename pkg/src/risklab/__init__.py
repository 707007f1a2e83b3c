"""Simulation and learning of exposure-notification risk score parameters."""

from .errors import ConfigError, DatasetParseError, MetricUndefinedError
from .evaluation import ExperimentConfig, roc_auc, run_trial, sweep
from .learner import TrainConfig, train
from .poolsim import BagConfig, GridSpec, Scenario
from .riskmodel import RiskParams, swiss_params
from .simcore import SimParams

__version__ = "0.1.0"

__all__ = [
    "BagConfig", "ConfigError", "DatasetParseError", "ExperimentConfig", "GridSpec",
    "MetricUndefinedError", "RiskParams", "Scenario", "SimParams", "TrainConfig",
    "roc_auc", "run_trial", "swiss_params", "sweep", "train",
]
