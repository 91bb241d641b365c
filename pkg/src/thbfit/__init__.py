"""Adaptive scattered-data fitting with truncated hierarchical B-splines."""

from .adaptive import FitConfig, FitOutcome, IterationReport, fit_adaptive
from .densela import lstsq, min_singular_value
from .domain import Box, DomainSpec, trim_basis
from .hiermesh import (
    DomainHierarchy,
    QuasiInterpolant,
    build_truncated,
    compute_active_sets,
    eval_qi,
    represent_in_thb,
)
from .localfit import GuardConfig, LocalFitFailure, ScatteredDataset, fit_lambda
from .splinecore import KnotVector, TensorSpace, dyadic_refine, poly_to_coeffs, two_scale

__version__ = "0.1.0"

__all__ = [
    "Box",
    "DomainHierarchy",
    "DomainSpec",
    "FitConfig",
    "FitOutcome",
    "GuardConfig",
    "IterationReport",
    "KnotVector",
    "LocalFitFailure",
    "QuasiInterpolant",
    "ScatteredDataset",
    "TensorSpace",
    "build_truncated",
    "compute_active_sets",
    "dyadic_refine",
    "eval_qi",
    "fit_adaptive",
    "fit_lambda",
    "lstsq",
    "min_singular_value",
    "poly_to_coeffs",
    "represent_in_thb",
    "trim_basis",
    "two_scale",
]
