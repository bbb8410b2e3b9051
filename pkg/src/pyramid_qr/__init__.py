"""Simultaneous Bayesian quantile regression with quantile pyramids."""
from __future__ import annotations

from .centering import GPD, Normal, Uniform, make_centering, transformed_prior_logdensity
from .checkloss import brute_force_checkloss, check_loss, checkloss_fit
from .geometry import DegenerateDataError, HullVertexSet, PivotFrame, combined_bounds, compute_hull
from .model import (
    Dataset, Hyperpriors, PQRModel, RegressionState, SplineModel, centering_plane, coefficients,
    conditional_quantiles, loglik_single, spline_quantiles,
)
from .pyramid import QuantileGrid, build_oblique_tree, sample_unit_pyramid, unit_prior_logdensity
from .sampler import (
    InitializationError, McmcConfig, PosteriorSamples, initialize_state, run_chain, run_chain_reparam,
    summarize,
)

__version__ = "0.1.0"

__all__ = [
    "GPD", "Normal", "Uniform", "make_centering", "transformed_prior_logdensity",
    "brute_force_checkloss", "check_loss", "checkloss_fit",
    "DegenerateDataError", "HullVertexSet", "PivotFrame", "combined_bounds", "compute_hull",
    "Dataset", "Hyperpriors", "PQRModel", "RegressionState", "SplineModel", "centering_plane",
    "coefficients", "conditional_quantiles", "loglik_single", "spline_quantiles",
    "QuantileGrid", "build_oblique_tree", "sample_unit_pyramid", "unit_prior_logdensity",
    "InitializationError", "McmcConfig", "PosteriorSamples", "initialize_state", "run_chain",
    "run_chain_reparam", "summarize",
]
