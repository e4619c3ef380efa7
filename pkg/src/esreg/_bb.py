"""Barzilai-Borwein gradient descent with a monotone backtracking safeguard."""

from dataclasses import dataclass

import numpy as np

_EPS = np.finfo(float).eps


@dataclass
class DescentResult:
    x: np.ndarray
    objective: float
    gradient: np.ndarray
    iterations: int
    converged: bool
    stalled: bool

    @property
    def gradient_norm(self):
        return float(np.linalg.norm(self.gradient))


def bb_descent(objective, gradient, x0, step0, tol, max_iter, max_step=1e8):
    """Minimise a smooth convex function starting from ``x0``.

    Steps are the second Barzilai-Borwein length ``s'y / y'y``; each step is
    halved until the objective does not increase beyond round-off.  Stops when
    the gradient norm drops to ``tol``.  ``stalled`` is set when backtracking
    cannot find a descent step, which callers treat as a cue to fall back.
    """
    x = np.array(x0, dtype=float)
    f = objective(x)
    g = gradient(x)
    step = float(step0)
    it = 0
    while True:
        gg = float(g @ g)
        if np.sqrt(gg) <= tol:
            return DescentResult(x, f, g, it, True, False)
        if it >= max_iter:
            return DescentResult(x, f, g, it, False, False)
        t = step
        slack = 8 * _EPS * max(abs(f), 1.0)
        while True:
            x_new = x - t * g
            f_new = objective(x_new)
            if f_new <= f - 1e-4 * t * gg + slack:
                break
            t *= 0.5
            if t * np.sqrt(gg) <= _EPS * (1.0 + np.linalg.norm(x)):
                return DescentResult(x, f, g, it, False, True)
        g_new = gradient(x_new)
        s, yv = x_new - x, g_new - g
        sy, yy = float(s @ yv), float(yv @ yv)
        if sy > 0 and yy > 0:
            step = min(sy / yy, max_step)
        else:
            step = min(2.0 * t, max_step)
        x, f, g = x_new, f_new, g_new
        it += 1
