"""Synchronous federated-learning simulator built around cost-improvement-
weighted model averaging, with a size-weighted baseline for comparison."""

from ._kernels import backend_name
from .aggregation import (
    ClientUpdate,
    CostHistory,
    StrategyConfig,
    WeightVector,
    aggregate,
    cost_ratios,
    fedavg_weights,
    fedcostwavg_weights,
    fedcostwintavg_weights,
)
from .federation import ExperimentConfig, ExperimentResult, run_experiment

__version__ = "0.1.0"

__all__ = [
    "ClientUpdate",
    "CostHistory",
    "StrategyConfig",
    "WeightVector",
    "aggregate",
    "cost_ratios",
    "fedavg_weights",
    "fedcostwavg_weights",
    "fedcostwintavg_weights",
    "ExperimentConfig",
    "ExperimentResult",
    "run_experiment",
    "backend_name",
    "__version__",
]
