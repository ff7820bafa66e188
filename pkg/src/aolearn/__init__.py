"""Augmented outcome-weighted learning of individualized treatment regimes."""

from .data import ScenarioSpec, TrialDataset, load_dataset, oracle_contrast, oracle_mu, simulate_scenario
from .exceptions import AOLError, DataError, SolverError
from .kernels import KernelSpec, kernel_matrix, kernel_value, median_heuristic
from .learner import (
    FitConfig,
    KernelRule,
    LinearRule,
    fit_kernel_aol,
    fit_kernel_aol_vs,
    fit_linear_aol,
    fit_linear_aol_vs,
    fit_rule,
    load_rule,
    predict,
    save_rule,
)
from .losses import ConditionalRisk, LossKind, SurrogateLoss
from .residuals import GVariant, compute_residuals, estimate_propensity, fit_g, reflect

__version__ = "0.1.0"

__all__ = [
    "AOLError",
    "ConditionalRisk",
    "DataError",
    "FitConfig",
    "GVariant",
    "KernelRule",
    "KernelSpec",
    "LinearRule",
    "LossKind",
    "ScenarioSpec",
    "SolverError",
    "SurrogateLoss",
    "TrialDataset",
    "compute_residuals",
    "estimate_propensity",
    "fit_g",
    "fit_kernel_aol",
    "fit_kernel_aol_vs",
    "fit_linear_aol",
    "fit_linear_aol_vs",
    "fit_rule",
    "kernel_matrix",
    "kernel_value",
    "load_dataset",
    "load_rule",
    "median_heuristic",
    "oracle_contrast",
    "oracle_mu",
    "predict",
    "reflect",
    "save_rule",
    "simulate_scenario",
]
