"""Sensitivity analysis for matched observational studies under effect heterogeneity."""

from .binaryip import enumerate_completions, ip_bound, test_binary
from .design import MatchedDesign, Stratum, StratumSummary, adjusted_deltas, load_design, summarize
from .inference import (
    ReferenceDistribution,
    changepoint,
    randomization_reference,
    randomization_test,
    run_test,
    test_dbar,
    test_ktilde,
)
from .results import METHODS, SensitivityResult
from .separable import GammaModel, perm_t_sensitivity, separable_pvalue, worst_case_moments
from .variance import DesignMatrixQ, default_q, se_q
from .weakstats import IntervalRestriction, d_stat, dbar, ipw_equivalent, k_weighted_average, ktilde

__version__ = "0.1.0"

__all__ = [
    "METHODS",
    "DesignMatrixQ",
    "GammaModel",
    "IntervalRestriction",
    "MatchedDesign",
    "ReferenceDistribution",
    "SensitivityResult",
    "Stratum",
    "StratumSummary",
    "adjusted_deltas",
    "changepoint",
    "d_stat",
    "dbar",
    "default_q",
    "enumerate_completions",
    "ip_bound",
    "ipw_equivalent",
    "k_weighted_average",
    "ktilde",
    "load_design",
    "perm_t_sensitivity",
    "randomization_reference",
    "randomization_test",
    "run_test",
    "se_q",
    "separable_pvalue",
    "summarize",
    "test_binary",
    "test_dbar",
    "test_ktilde",
    "worst_case_moments",
]
