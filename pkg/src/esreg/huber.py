"""Huber loss machinery and the adaptive robust ES regression procedure."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._bb import bb_descent
from .core import (
    Dataset,
    DegenerateDesign,
    FitDiagnostics,
    NoSolution,
    NotPositiveDefinite,
    SolverControl,
    cholesky_solve,
    solve_normal_equations,
    warn_not_converged,
)
from .es import EsFit, count_crossings, es_ls_fit, generate_response

MAX_OUTER = 50


def huber_loss(u, tau):
    u = np.asarray(u, dtype=float)
    a = np.abs(u)
    return np.where(a <= tau, 0.5 * u * u, tau * a - 0.5 * tau * tau)


def huber_psi(u, tau):
    return np.clip(np.asarray(u, dtype=float), -tau, tau)


def censored_fraction(residuals, tau):
    """(1/n) sum min(w_i^2, tau^2) / tau^2."""
    a = np.abs(np.asarray(residuals, dtype=float))
    return float(np.mean(np.minimum(a, tau) ** 2) / tau**2)


@dataclass(frozen=True)
class TauCalibration:
    tau: float
    target: float
    residual_count_nonzero: int
    iterations: int


def calibrate_tau(residuals, p, target=None):
    """Solve (1/n) sum min(w_i^2, tau^2) / tau^2 = (p + log n) / n for tau.

    ``target`` replaces (p + log n) / n when given.

    The left side is continuous and strictly decreasing beyond the smallest
    nonzero |w_i|.  Bisection over the sorted |w_i| brackets the root between
    two consecutive knots; on that segment the equation reads
    S_k / tau^2 + (n - k) = p + log n and is solved exactly.
    """
    a = np.sort(np.abs(np.asarray(residuals, dtype=float).reshape(-1)))
    n = a.size
    if target is not None and not 0 < target < 1:
        raise ValueError("target must lie in (0, 1)")
    c = p + math.log(n) if target is None else float(target) * n
    nnz = int(np.count_nonzero(a > 0))
    if not nnz > c:
        raise NoSolution(
            f"only {nnz} nonzero residuals; need more than n * target = {c:.3f}"
        )
    csq = np.concatenate([[0.0], np.cumsum(a * a)])

    def g_at(j):
        # n * f(a_j): entries before j are below the knot, the rest are capped.
        return csq[j] / (a[j] * a[j]) + (n - j)

    # g(a[lo]) >= c holds at the first nonzero knot; find the last such knot.
    lo, hi = n - nnz, n - 1
    iterations = 0
    if g_at(hi) >= c:
        lo = hi
    else:
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if g_at(mid) >= c:
                lo = mid
            else:
                hi = mid
            iterations += 1
    k = lo + 1
    tau = math.sqrt(csq[k] / (c - (n - k)))
    return TauCalibration(tau, c / n, nnz, iterations)


def rule_of_thumb_tau(qr_residuals, p, delta=None):
    """sd of the negative QR residuals times sqrt(n / (p + log(1/delta))).

    ``delta`` defaults to 1/n.
    """
    e = np.minimum(np.asarray(qr_residuals, dtype=float), 0.0)
    n = e.size
    log_inv_delta = math.log(n) if delta is None else -math.log(delta)
    return float(np.std(e, ddof=1) * math.sqrt(n / (p + log_inv_delta)))


def huber_objective(theta, x, z, alpha, tau):
    return float(np.mean(huber_loss(z - alpha * (x @ theta), tau)))


def huber_gradient(theta, x, z, alpha, tau):
    r = z - alpha * (x @ theta)
    return -alpha * (x.T @ huber_psi(r, tau)) / x.shape[0]


def _newton_polish(x, z, alpha, tau, theta, max_steps=20):
    """Semismooth Newton steps for the Huber score equation.

    With the set of clipped residuals held fixed the score equation is linear;
    a step is kept only if it does not increase the objective.
    """
    f = huber_objective(theta, x, z, alpha, tau)
    for _ in range(max_steps):
        r = z - alpha * (x @ theta)
        inside = np.abs(r) <= tau
        if np.count_nonzero(inside) < x.shape[1]:
            break
        xi = x[inside]
        rhs = xi.T @ z[inside] + tau * (x[~inside].T @ np.sign(r[~inside]))
        try:
            cand = cholesky_solve(xi.T @ xi, rhs) / alpha
        except (NotPositiveDefinite, ValueError):
            break
        f_new = huber_objective(cand, x, z, alpha, tau)
        if not f_new <= f + 8 * np.finfo(float).eps * max(abs(f), 1.0):
            break
        moved = np.max(np.abs(cand - theta))
        theta, f = cand, f_new
        if moved <= 1e-15 * (1.0 + np.max(np.abs(theta))):
            break
    g = huber_gradient(theta, x, z, alpha, tau)
    return theta, f, float(np.linalg.norm(g))


def _irls(x, z, alpha, tau, theta, tol, max_iter):
    """Huber IRLS with weights min(1, tau/|r|); the objective never increases."""
    gnorm = np.inf
    for it in range(1, max_iter + 1):
        r = z - alpha * (x @ theta)
        w = tau / np.maximum(np.abs(r), tau)
        xw = x * w[:, None]
        try:
            theta = cholesky_solve(xw.T @ x, xw.T @ z) / alpha
        except NotPositiveDefinite:
            raise DegenerateDesign("weighted design is rank deficient") from None
        gnorm = float(np.linalg.norm(huber_gradient(theta, x, z, alpha, tau)))
        if gnorm <= tol:
            return theta, it, True
    return theta, max_iter, False


def huber_reg_fit(x, z, alpha, tau, control=None, init=None):
    """Minimise (1/n) sum l_tau(z_i - alpha x_i'theta).

    Barzilai-Borwein gradient descent with a monotone safeguard; if it stalls
    or exhausts half the iteration budget, IRLS takes over.  A final
    semismooth Newton polish solves the score equation to round-off once the
    clipping pattern has settled.

    Returns
    -------
    theta : ndarray
    diagnostics : FitDiagnostics
        ``converged`` refers to the score-equation norm reaching ``control.tol``.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    control = control or SolverControl()
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    n, p = x.shape
    if init is None:
        theta0 = solve_normal_equations(x, z / alpha)
    else:
        theta0 = np.array(init, dtype=float)
        if theta0.shape != (p,):
            raise ValueError(f"init must have length {p}")
        solve_normal_equations(x, np.zeros(n))

    lipschitz = alpha * alpha * float(np.einsum("ij,ij->", x, x)) / n
    budget = max(1, control.max_iter // 2)
    res = bb_descent(
        lambda t: huber_objective(t, x, z, alpha, tau),
        lambda t: huber_gradient(t, x, z, alpha, tau),
        theta0,
        step0=1.0 / lipschitz,
        tol=control.tol,
        max_iter=budget,
    )
    theta, iterations = res.x, res.iterations
    if not res.converged:
        theta, extra, _ = _irls(x, z, alpha, tau, theta, control.tol, control.max_iter - budget)
        iterations += extra
    theta, f, gnorm = _newton_polish(x, z, alpha, tau, theta)
    converged = gnorm <= control.tol
    if not converged:
        warn_not_converged("Huber regression", iterations, gnorm)
    return theta, FitDiagnostics(iterations, converged, gnorm, f)


@dataclass(frozen=True)
class TraceStep:
    tau: float
    theta: np.ndarray
    objective: float


@dataclass
class RobustEsTrace:
    steps: list = field(default_factory=list)
    converged: bool = False


def adaptive_huber_es(data: Dataset, beta, alpha, control=None, tau_min=0.0):
    """Two-step ES regression with an adaptively tuned Huber second stage.

    Starting from the least-squares two-step fit, alternate between solving
    the censored equation for tau on the current ES residuals and refitting
    the Huber regression of the generated response, until the relative change
    in theta is below ``control.tol`` (at most 50 rounds).

    ``tau_min`` floors every calibrated tau; a huge floor turns the procedure
    into the least-squares fit.

    Returns
    -------
    fit : EsFit
        method ``"huber"``; ``tau`` is the last calibrated value, or ``inf``
        when every residual is zero.
    trace : RobustEsTrace
    """
    control = control or SolverControl()
    beta = np.asarray(beta, dtype=float)
    x, p = data.x, data.p
    z = generate_response(data, beta, alpha)
    ls = es_ls_fit(data, beta, alpha)
    theta = np.array(ls.theta)
    trace = RobustEsTrace()

    omega = z - alpha * (x @ theta)
    if not np.any(omega != 0):
        trace.converged = True
        return (
            EsFit(theta, float(alpha), "huber", math.inf, ls.crossings, ls.diagnostics),
            trace,
        )

    diag = ls.diagnostics
    tau = math.inf
    for _ in range(MAX_OUTER):
        omega = z - alpha * (x @ theta)
        tau = max(calibrate_tau(omega, p).tau, tau_min)
        new, diag = huber_reg_fit(x, z, alpha, tau, control, init=theta)
        trace.steps.append(TraceStep(tau, new, diag.objective))
        change = np.linalg.norm(new - theta)
        scale = 1.0 + np.linalg.norm(theta)
        theta = new
        if change <= control.tol * scale:
            trace.converged = True
            break
    if not trace.converged:
        warn_not_converged("adaptive Huber alternation", len(trace.steps), diag.final_gradient_norm)
    fit = EsFit(
        theta,
        float(alpha),
        "huber",
        tau=float(tau),
        crossings=count_crossings(data, beta, theta),
        diagnostics=diag,
    )
    return fit, trace
