"""Second-stage least-squares expected shortfall regression."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .core import Dataset, DegenerateDesign, FitDiagnostics, solve_normal_equations

METHODS = ("ls", "huber", "nc_ls", "nc_huber", "oracle")


@dataclass(frozen=True)
class EsFit:
    theta: np.ndarray
    alpha: float
    method: str
    tau: Optional[float] = None
    crossings: int = 0
    diagnostics: Optional[FitDiagnostics] = field(default=None, repr=False)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        theta = np.array(self.theta, dtype=float)
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)


def count_crossings(data: Dataset, beta, theta, tol=1e-10):
    """Number of observations whose fitted ES exceeds the fitted quantile."""
    gap = data.x @ np.asarray(theta) - data.x @ np.asarray(beta)
    return int(np.count_nonzero(gap > tol))


def generate_response(data: Dataset, beta, alpha):
    """Z_i = (Y_i - X_i'beta) 1{Y_i <= X_i'beta} + alpha X_i'beta (ties included)."""
    q = data.x @ np.asarray(beta, dtype=float)
    eps = data.y - q
    return np.where(eps <= 0, eps, 0.0) + alpha * q


def _ls_diagnostics(x, z, alpha, theta):
    r = z - alpha * (x @ theta)
    grad = -alpha * (x.T @ r) / x.shape[0]
    return FitDiagnostics(0, True, float(np.linalg.norm(grad)), float(np.mean(r * r)))


def es_ls_fit(data: Dataset, beta, alpha):
    """Two-step least-squares ES estimator.

    theta = beta + (sum X_i X_i')^{-1} alpha^{-1} sum (Y_i - X_i'beta) X_i 1{Y_i <= X_i'beta}.
    The same vector is obtained by regressing Z/alpha on x; both routes are
    computed and checked against each other when assertions are enabled.
    """
    beta = np.asarray(beta, dtype=float)
    x = data.x
    eps = data.y - x @ beta
    neg = np.where(eps <= 0, eps, 0.0)
    theta = beta + solve_normal_equations(x, neg) / alpha
    z = neg + alpha * (x @ beta)
    if __debug__:
        theta_reg = solve_normal_equations(x, z / alpha)
        scale = 1.0 + np.max(np.abs(theta))
        assert np.max(np.abs(theta - theta_reg)) <= 1e-6 * scale, "ES closed form mismatch"
    return EsFit(
        theta,
        float(alpha),
        "ls",
        crossings=count_crossings(data, beta, theta),
        diagnostics=_ls_diagnostics(x, z, alpha, theta),
    )


def sample_quantile(y, alpha):
    """Lower empirical quantile inf{t : F_n(t) >= alpha}."""
    ys = np.sort(np.asarray(y, dtype=float))
    n = ys.size
    k = int(np.ceil(alpha * n - 1e-12))
    return float(ys[max(k, 1) - 1])


def univariate_es(y, alpha):
    """Empirical expected shortfall with the finite-sample CDF correction.

    (1/(alpha n)) sum y_i 1{y_i <= Q} + Q (1 - F_n(Q) / alpha), Q the lower
    sample alpha-quantile.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size < 1:
        raise ValueError("need at least one observation")
    n = y.size
    q = sample_quantile(y, alpha)
    below = y <= q
    f_q = np.count_nonzero(below) / n
    return float(np.sum(y[below]) / (alpha * n) + q * (1.0 - f_q / alpha))


def oracle_es_fit(data: Dataset, beta_star, alpha):
    """Least squares of Y on X over the subsample {Y_i <= X_i'beta*}."""
    beta_star = np.asarray(beta_star, dtype=float)
    sel = data.y <= data.x @ beta_star
    if np.count_nonzero(sel) < data.p:
        raise DegenerateDesign("fewer selected observations than coefficients")
    theta = solve_normal_equations(data.x[sel], data.y[sel], what="selected subsample")
    r = data.y[sel] - data.x[sel] @ theta
    grad = -(data.x[sel].T @ r) / data.n
    diag = FitDiagnostics(0, True, float(np.linalg.norm(grad)), float(np.sum(r * r) / data.n))
    return EsFit(
        theta,
        float(alpha),
        "oracle",
        crossings=count_crossings(data, beta_star, theta),
        diagnostics=diag,
    )


def two_step_oracle_fit(data: Dataset, beta_star, alpha):
    """Two-step least-squares fit at the true thresholds X_i'beta* (no first-stage error)."""
    return replace(es_ls_fit(data, beta_star, alpha), method="oracle")
