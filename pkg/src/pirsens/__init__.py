"""Partial identification of linear causal effects under unmeasured confounding."""

__version__ = "0.1.0"

from .r2calc import CovarianceModel, Roles, partial_r, partial_r2
from .estimands import EstimableParams, SensitivityPoint, causal_beta, estimate_theta, tsls_gap
from .sensmodel import (
    CompUD,
    CompUYCondD,
    CompUYUncondD,
    CompUZ,
    CompZY,
    DirectUD,
    DirectUY,
    DirectUZ,
    DirectZY,
    SensitivityModel,
    compile_model,
)
from .gridopt import GridParams, PirEstimate, solve_pir
from .bootstrap import BootstrapSpec, SensitivityInterval, sensitivity_interval

__all__ = [
    "CovarianceModel", "Roles", "partial_r", "partial_r2",
    "EstimableParams", "SensitivityPoint", "causal_beta", "estimate_theta", "tsls_gap",
    "CompUD", "CompUYCondD", "CompUYUncondD", "CompUZ", "CompZY",
    "DirectUD", "DirectUY", "DirectUZ", "DirectZY", "SensitivityModel", "compile_model",
    "GridParams", "PirEstimate", "solve_pir",
    "BootstrapSpec", "SensitivityInterval", "sensitivity_interval",
]
