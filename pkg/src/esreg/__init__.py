"""Joint quantile and expected shortfall regression in two steps.

A smoothed quantile regression supplies the thresholds; the expected
shortfall coefficients then come from least squares or an adaptively
tuned Huber regression on generated responses, optionally constrained so
the fitted ES never exceeds the fitted quantile.
"""

from .core import (
    BadDegrees,
    Dataset,
    DegenerateDesign,
    EsregError,
    FitDiagnostics,
    Infeasible,
    NoSolution,
    NotConverged,
    NotPositiveDefinite,
    SolverControl,
    ZeroVariance,
    make_rng,
    split_seed,
)
from .es import (
    EsFit,
    count_crossings,
    es_ls_fit,
    generate_response,
    oracle_es_fit,
    two_step_oracle_fit,
    univariate_es,
)
from .huber import adaptive_huber_es, calibrate_tau, huber_loss, huber_psi, huber_reg_fit
from .inference import (
    InferenceResult,
    confidence_intervals,
    es_inference,
    es_residuals,
    plugin_covariance,
    truncated_covariance,
    wald_test,
)
from .noncross import nc_es_huber_fit, nc_es_ls_fit
from .qp import QpProblem, QpSolution, qp_solve
from .qr import QuantileFit, check_loss, default_bandwidth, smoothed_qr_fit

__version__ = "0.1.0"

__all__ = [
    "BadDegrees",
    "Dataset",
    "DegenerateDesign",
    "EsFit",
    "EsregError",
    "FitDiagnostics",
    "InferenceResult",
    "Infeasible",
    "NoSolution",
    "NotConverged",
    "NotPositiveDefinite",
    "QpProblem",
    "QpSolution",
    "QuantileFit",
    "SolverControl",
    "ZeroVariance",
    "adaptive_huber_es",
    "calibrate_tau",
    "check_loss",
    "confidence_intervals",
    "count_crossings",
    "default_bandwidth",
    "es_inference",
    "es_ls_fit",
    "es_residuals",
    "generate_response",
    "huber_loss",
    "huber_psi",
    "huber_reg_fit",
    "make_rng",
    "nc_es_huber_fit",
    "nc_es_ls_fit",
    "oracle_es_fit",
    "plugin_covariance",
    "qp_solve",
    "smoothed_qr_fit",
    "split_seed",
    "truncated_covariance",
    "two_step_oracle_fit",
    "univariate_es",
    "wald_test",
]
