"""ES regression constrained so that fitted ES never exceeds the fitted quantile."""

from __future__ import annotations

import numpy as np

from .core import Dataset, FitDiagnostics, SolverControl, warn_not_converged
from .es import EsFit, count_crossings, generate_response
from .huber import calibrate_tau, huber_gradient, huber_objective
from .qp import QpProblem, kkt_residuals, qp_solve

__all__ = ["count_crossings", "irls_weights", "nc_es_huber_fit", "nc_es_ls_fit", "weighted_qp"]

MAX_IRLS = 500


def weighted_qp(data: Dataset, beta, z, alpha, v=None):
    """QP data for min (1/n) sum v_i (z_i - alpha X_i'theta)^2 / 2 s.t. X theta <= X beta."""
    x, n = data.x, data.n
    v = np.ones(n) if v is None else np.asarray(v, dtype=float)
    xv = x * v[:, None]
    c = alpha * alpha * (xv.T @ x) / n
    c = 0.5 * (c + c.T)
    d = -alpha * (xv.T @ z) / n
    return QpProblem(c, d, x, x @ np.asarray(beta, dtype=float))


def irls_weights(omega, tau):
    """w_i = (|w_i|/tau - 1) 1{|w_i| > tau}; the QP uses 1/(1 + w_i)."""
    a = np.abs(np.asarray(omega, dtype=float))
    return np.where(a > tau, a / tau - 1.0, 0.0)


def nc_es_ls_fit(data: Dataset, beta, alpha):
    beta = np.asarray(beta, dtype=float)
    z = generate_response(data, beta, alpha)
    problem = weighted_qp(data, beta, z, alpha)
    sol = qp_solve(problem)
    r = z - alpha * (data.x @ sol.theta)
    diag = FitDiagnostics(sol.iterations, True, kkt_residuals(problem, sol)[1], float(np.mean(r * r)))
    return EsFit(
        sol.theta,
        float(alpha),
        "nc_ls",
        crossings=count_crossings(data, beta, sol.theta),
        diagnostics=diag,
    )


def nc_es_huber_fit(data: Dataset, beta, alpha, control=None, return_path=False):
    """Non-crossing adaptive Huber ES fit by iteratively reweighted QPs.

    Each round recalibrates tau on the current ES residuals, converts the
    Huber loss into weights 1/(1 + w_i) and solves the weighted least-squares
    QP under the non-crossing constraints.  Starts from the non-crossing
    least-squares fit.
    """
    control = control or SolverControl()
    beta = np.asarray(beta, dtype=float)
    x, n, p = data.x, data.n, data.p
    z = generate_response(data, beta, alpha)
    theta = np.array(nc_es_ls_fit(data, beta, alpha).theta)
    path = [theta]
    tau = np.inf
    lam = np.zeros(n)
    converged = False
    rounds = 0
    for rounds in range(1, min(control.max_iter, MAX_IRLS) + 1):
        omega = z - alpha * (x @ theta)
        if not np.any(omega != 0):
            converged = True
            break
        tau = calibrate_tau(omega, p).tau
        v = 1.0 / (1.0 + irls_weights(omega, tau))
        sol = qp_solve(weighted_qp(data, beta, z, alpha, v))
        new, lam = np.array(sol.theta), sol.multipliers(n)
        path.append(new)
        change = np.linalg.norm(new - theta)
        scale = 1.0 + np.linalg.norm(theta)
        theta = new
        if change <= control.tol * scale:
            converged = True
            break
    if np.isfinite(tau):
        f = huber_objective(theta, x, z, alpha, tau)
        # stationarity of the constrained Huber problem with the last multipliers
        gnorm = float(np.linalg.norm(huber_gradient(theta, x, z, alpha, tau) + x.T @ lam))
    else:
        f, gnorm = 0.0, 0.0
    if not converged:
        warn_not_converged("non-crossing IRLS-QP", rounds, gnorm)
    fit = EsFit(
        theta,
        float(alpha),
        "nc_huber",
        tau=float(tau),
        crossings=count_crossings(data, beta, theta),
        diagnostics=FitDiagnostics(rounds, converged, gnorm, f),
    )
    if return_path:
        return fit, path
    return fit
