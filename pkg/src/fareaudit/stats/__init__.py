"""Statistical kernel: special functions and the tests built on them."""

from .inference import (
    ALTERNATIVES,
    CORRECTIONS,
    T_MODES,
    ContingencyTable,
    IntervalClassification,
    PairwiseResult,
    TestResult,
    adjust_pvalues,
    chi_square_test,
    classify_intervals,
    format_p,
    mann_whitney_u,
    paired_t_effective,
    pairwise_chi_square,
    prediction_interval,
    rankdata,
    z_multiplier,
)
from .special import (
    chi2_sf,
    ln_gamma,
    normal_cdf,
    normal_ppf,
    normal_sf,
    reg_beta_i,
    reg_gamma_p,
    reg_gamma_q,
    student_t_cdf,
    student_t_sf,
)

__all__ = [
    "ALTERNATIVES",
    "CORRECTIONS",
    "T_MODES",
    "ContingencyTable",
    "IntervalClassification",
    "PairwiseResult",
    "TestResult",
    "adjust_pvalues",
    "chi2_sf",
    "chi_square_test",
    "classify_intervals",
    "format_p",
    "ln_gamma",
    "mann_whitney_u",
    "normal_cdf",
    "normal_ppf",
    "normal_sf",
    "paired_t_effective",
    "pairwise_chi_square",
    "prediction_interval",
    "rankdata",
    "reg_beta_i",
    "reg_gamma_p",
    "reg_gamma_q",
    "student_t_cdf",
    "student_t_sf",
    "z_multiplier",
]
