"""Dual active-set solver for strictly convex QPs with inequality constraints.

Solves  minimise 1/2 theta'C theta + d'theta  subject to  A theta <= b
following the Goldfarb-Idnani dual method: start at the unconstrained
minimiser, then repeatedly pick the most violated constraint and move along
a primal/dual direction that keeps the current active constraints tight and
their multipliers nonnegative, dropping constraints whose multiplier hits
zero.  The projected quantities are recomputed from a QR factorisation of
L^{-1} A_K' at every pivot (L the Cholesky factor of C).

TODO(perf): replace the per-pivot QR with Givens updates once p grows past a
few hundred.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .core import EsregError, Infeasible, cholesky_factor

# Test runs export ESREG_CHECK_KKT=1 so every solve verifies its KKT triple.
CHECK_KKT = os.environ.get("ESREG_CHECK_KKT") == "1"
KKT_TOL = 1e-8


@dataclass(frozen=True)
class QpProblem:
    c_mat: np.ndarray
    d: np.ndarray
    a_mat: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c_mat, dtype=float)
        d = np.asarray(self.d, dtype=float).reshape(-1)
        a = np.asarray(self.a_mat, dtype=float)
        b = np.asarray(self.b, dtype=float).reshape(-1)
        p = d.size
        if a.size == 0:
            a = np.zeros((0, p))
        if c.shape != (p, p) or a.ndim != 2 or a.shape[1] != p or a.shape[0] != b.size:
            raise ValueError("inconsistent QP dimensions")
        for name, val in (("c_mat", c), ("d", d), ("a_mat", a), ("b", b)):
            object.__setattr__(self, name, val)

    def objective(self, theta):
        theta = np.asarray(theta, dtype=float)
        return float(0.5 * theta @ self.c_mat @ theta + self.d @ theta)


@dataclass(frozen=True)
class QpSolution:
    theta: np.ndarray
    active_set: list
    dual: np.ndarray
    iterations: int
    objective: float

    def multipliers(self, m):
        """Full-length multiplier vector (zero off the active set)."""
        lam = np.zeros(m)
        lam[self.active_set] = self.dual
        return lam


def kkt_residuals(problem: QpProblem, sol: QpSolution):
    """(max violation of A theta <= b, stationarity inf-norm, max |lambda_i slack_i|)."""
    m = problem.b.size
    lam = sol.multipliers(m)
    slack = problem.b - problem.a_mat @ sol.theta
    feas = float(max(0.0, -slack.min())) if m else 0.0
    stat = problem.c_mat @ sol.theta + problem.d + problem.a_mat.T @ lam
    comp = float(np.max(np.abs(lam * slack))) if m else 0.0
    return feas, float(np.max(np.abs(stat))), comp


def _solve_kkt(c, d, a_act, b_act):
    """Equality-constrained QP through its KKT system."""
    p, q = c.shape[0], a_act.shape[0]
    kkt = np.zeros((p + q, p + q))
    kkt[:p, :p] = c
    kkt[:p, p:] = a_act.T
    kkt[p:, :p] = a_act
    rhs = np.concatenate([-d, b_act])
    sol = np.linalg.solve(kkt, rhs)
    return sol[:p], sol[p:]


def qp_solve(problem: QpProblem, max_iter=None, feas_tol=None):
    """Solve the QP; raises Infeasible if the constraints admit no point."""
    c, d, a, b = problem.c_mat, problem.d, problem.a_mat, problem.b
    p, m = d.size, b.size
    low = cholesky_factor(c)
    linv_at = scipy.linalg.solve_triangular(low, a.T, lower=True) if m else np.zeros((p, 0))

    def cinv_from_w(w):
        # C^{-1} v = L^{-T} w with w = L^{-1} v
        return scipy.linalg.solve_triangular(low, w, lower=True, trans="T")

    theta = cinv_from_w(-scipy.linalg.solve_triangular(low, d, lower=True))
    if feas_tol is None:
        feas_tol = 1e-12 * (1.0 + (np.max(np.abs(b)) if m else 0.0))
    if max_iter is None:
        max_iter = 10 * (m + p) + 100
    active: list = []
    lam = np.zeros(0)
    iterations = 0

    while True:
        slack = b - a @ theta if m else np.zeros(0)
        if active:
            slack[active] = np.inf
        if m == 0 or slack.min() >= -feas_tol:
            break
        j = int(np.argmin(slack))
        t_j = 0.0
        while True:
            iterations += 1
            if iterations > max_iter:
                raise EsregError("dual active-set iteration limit reached")
            w = linv_at[:, j]
            if active:
                bk = linv_at[:, active]
                qmat, rmat = np.linalg.qr(bk)
                proj = qmat.T @ w
                r = scipy.linalg.solve_triangular(rmat, proj)
                w_perp = w - qmat @ proj
            else:
                r = np.zeros(0)
                w_perp = w
            dependent = np.linalg.norm(w_perp) <= 1e-12 * (1.0 + np.linalg.norm(w))
            z = -cinv_from_w(w_perp)

            pos = r > 1e-14
            if np.any(pos):
                ratios = np.full(r.size, np.inf)
                ratios[pos] = lam[pos] / r[pos]
                k = int(np.argmin(ratios))
                t1 = float(ratios[k])
            else:
                k, t1 = -1, np.inf
            cur = float(b[j] - a[j] @ theta)
            az = float(a[j] @ z)
            t2 = np.inf if dependent or az >= 0 else cur / az

            if np.isinf(t1) and np.isinf(t2):
                raise Infeasible(f"constraint {j} cannot be satisfied")
            if np.isinf(t2):
                lam = lam - t1 * r
                t_j += t1
                del active[k]
                lam = np.delete(lam, k)
                continue
            t = min(t1, t2)
            theta = theta + t * z
            lam = lam - t * r
            t_j += t
            if t2 <= t1:
                active.append(j)
                lam = np.append(lam, t_j)
                break
            del active[k]
            lam = np.delete(lam, k)

    lam = np.maximum(lam, 0.0)
    if active:
        # Re-solve the KKT system on the final active set to remove drift.
        try:
            th2, lam2 = _solve_kkt(c, d, a[active], b[active])
            if np.all(lam2 >= -1e-12) and np.all(a @ th2 - b <= max(feas_tol, 1e-12)):
                theta, lam = th2, np.maximum(lam2, 0.0)
        except np.linalg.LinAlgError:
            pass
    theta.setflags(write=False)
    sol = QpSolution(theta, list(active), lam, iterations, problem.objective(theta))
    if CHECK_KKT:
        res = kkt_residuals(problem, sol)
        assert max(res) <= KKT_TOL, f"KKT residuals {res} exceed {KKT_TOL}"
    return sol
