"""Estimators: parametric g-formula, sequential g-formula and LTMLE."""
from .bootstrap import BootstrapError, BootstrapResult, bootstrap_ci
from .common import EstimateResult, EstimationError, HistoryConfig
from .gformula import (
    GFormulaConfig,
    GFormulaModelBank,
    NaturalCourseTable,
    fit_model_bank,
    gformula_estimate,
    natural_course,
    simulate_forward,
)
from .ltmle import (
    CleverCovariateTrace,
    GModelBank,
    LtmleConfig,
    clever_covariate,
    fit_g_models,
    ltmle_estimate,
    seq_gformula_estimate,
)

__all__ = [
    "BootstrapError",
    "BootstrapResult",
    "CleverCovariateTrace",
    "EstimateResult",
    "EstimationError",
    "GFormulaConfig",
    "GFormulaModelBank",
    "GModelBank",
    "HistoryConfig",
    "LtmleConfig",
    "NaturalCourseTable",
    "bootstrap_ci",
    "clever_covariate",
    "fit_g_models",
    "fit_model_bank",
    "gformula_estimate",
    "ltmle_estimate",
    "natural_course",
    "seq_gformula_estimate",
    "simulate_forward",
]
