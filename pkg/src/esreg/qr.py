"""First-stage quantile regression by convolution smoothing (Gaussian kernel)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from ._bb import bb_descent
from .core import (
    Dataset,
    FitDiagnostics,
    SolverControl,
    solve_normal_equations,
    warn_not_converged,
)

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def check_loss(u, alpha):
    """Quantile check function rho_alpha(u) = (alpha - 1{u < 0}) u."""
    u = np.asarray(u, dtype=float)
    return np.where(u < 0, (alpha - 1.0) * u, alpha * u)


def smoothed_check_loss(u, alpha, h):
    """Check loss convolved with a N(0, h^2) kernel.

    Closed form: u (alpha - Phi(-u/h)) + h phi(u/h).
    """
    u = np.asarray(u, dtype=float)
    v = u / h
    return u * (alpha - ndtr(-v)) + h * _INV_SQRT_2PI * np.exp(-0.5 * v * v)


def default_bandwidth(n, p):
    return max(0.05, ((p + np.log(n)) / n) ** 0.4)


def smoothed_qr_objective(beta, x, y, alpha, h):
    return float(np.mean(smoothed_check_loss(y - x @ beta, alpha, h)))


def smoothed_qr_gradient(beta, x, y, alpha, h):
    """(1/n) sum {Phi((x_i'beta - y_i)/h) - alpha} x_i."""
    w = ndtr((x @ beta - y) / h) - alpha
    return x.T @ w / x.shape[0]


@dataclass(frozen=True)
class QuantileFit:
    beta: np.ndarray
    alpha: float
    bandwidth: float
    diagnostics: FitDiagnostics = field(repr=False)

    def fitted(self, x):
        return np.asarray(x) @ self.beta


def smoothed_qr_fit(data: Dataset, alpha, bandwidth=None, control=None, init=None):
    """Smoothed quantile regression at level ``alpha``.

    Parameters
    ----------
    data : Dataset
    alpha : float in (0, 1)
    bandwidth : float, optional
        Gaussian kernel bandwidth h; defaults to
        ``max(0.05, ((p + log n) / n) ** 0.4)``.
    control : SolverControl, optional
    init : array, optional
        Starting coefficients; the least-squares fit by default.

    Returns
    -------
    QuantileFit
        ``diagnostics.converged`` is False (and a NotConverged warning is
        issued) when the iteration cap is reached first.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    control = control or SolverControl()
    x, y = data.x, data.y
    n, p = x.shape
    h = default_bandwidth(n, p) if bandwidth is None else float(bandwidth)
    if not h > 0:
        raise ValueError("bandwidth must be positive")

    if init is None:
        beta0 = solve_normal_equations(x, y)
    else:
        beta0 = np.asarray(init, dtype=float)
        if beta0.shape != (p,):
            raise ValueError(f"init must have length {p}")
        solve_normal_equations(x, np.zeros(n))  # rank check only

    # Hessian is bounded by phi(0)/h * x'x/n; its trace bounds the top eigenvalue.
    lipschitz = _INV_SQRT_2PI / h * float(np.einsum("ij,ij->", x, x)) / n
    res = bb_descent(
        lambda b: smoothed_qr_objective(b, x, y, alpha, h),
        lambda b: smoothed_qr_gradient(b, x, y, alpha, h),
        beta0,
        step0=1.0 / lipschitz,
        tol=control.tol,
        max_iter=control.max_iter,
    )
    if not res.converged:
        warn_not_converged("smoothed quantile regression", res.iterations, res.gradient_norm)
    diag = FitDiagnostics(res.iterations, res.converged, res.gradient_norm, res.objective)
    beta = res.x
    beta.setflags(write=False)
    return QuantileFit(beta, float(alpha), h, diag)


def small_bandwidth(y):
    """Bandwidth used to approximate the unsmoothed quantile regression fit."""
    sd = float(np.std(y))
    return 0.01 * sd if sd > 0 else 0.01
