"""Bayesian principal stratification with flexible outcome models."""

from __future__ import annotations

from .exceptions import (
    ConfigError,
    DataError,
    FormulaError,
    IncompatibleDataError,
    MonotonicityError,
    PrinstratError,
    SamplerError,
    StrataError,
    UnstableEstimateError,
)
from .estimator import PrincipalScoreWeighting, PrincipalStratification
from .families import FamilySpec
from .formula import parse_formula
from .model import PsModel, build_model
from .priors import Prior, PriorSpec
from .strata import parse_strata

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "FamilySpec",
    "FormulaError",
    "IncompatibleDataError",
    "MonotonicityError",
    "Prior",
    "PrincipalScoreWeighting",
    "PrincipalStratification",
    "PriorSpec",
    "PrinstratError",
    "PsModel",
    "SamplerError",
    "StrataError",
    "UnstableEstimateError",
    "__version__",
    "build_model",
    "parse_formula",
    "parse_strata",
]
