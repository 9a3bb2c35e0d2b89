"""Bayesian transport maps shrunk toward a Vecchia-approximated Gaussian base."""

__version__ = "0.1.0"

from .basegauss import BaseFamily, gaussian_loglik, matcov_mle, vecchia_coefficients, vecchia_loglik
from .geometry import Ordering, grid_locations, maximin_order, neighbor_sets
from .io import load_any, load_model, read_data, read_locations, save_model, write_data, write_locations
from .mapkernel import HyperParams, prior_moments, sparsity_level
from .optimize import PROTOCOL, OptimizerConfig, fit, fit_fields, initial_hyperparams
from .posterior import FittedMap, fit_components, integrated_loglik
from .score import CompareConfig, GaussianModel, compare, conditional_rmse, log_score, log_scores, summarize
from .simulate import SimDesign, simulate

__all__ = [
    "BaseFamily", "CompareConfig", "FittedMap", "GaussianModel", "HyperParams", "OptimizerConfig",
    "Ordering", "PROTOCOL", "SimDesign", "compare", "conditional_rmse", "fit", "fit_components",
    "fit_fields", "gaussian_loglik", "grid_locations", "initial_hyperparams", "integrated_loglik",
    "load_any", "load_model", "log_score", "log_scores", "matcov_mle", "maximin_order",
    "neighbor_sets", "prior_moments", "read_data", "read_locations", "save_model", "simulate",
    "sparsity_level", "summarize", "vecchia_coefficients", "vecchia_loglik", "write_data",
    "write_locations",
]
