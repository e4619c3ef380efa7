"""Shared data model, dense linear-algebra kernels and deterministic seeding."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

_MASK64 = (1 << 64) - 1
_GOLDEN64 = 0x9E3779B97F4A7C15


class EsregError(Exception):
    """Base class for all errors raised by this package."""


class NotPositiveDefinite(EsregError, np.linalg.LinAlgError):
    pass


class DegenerateDesign(NotPositiveDefinite):
    """The design matrix (or a selected subsample of it) is rank deficient."""


class NoSolution(EsregError, ValueError):
    """The censored tuning equation has no root (too few nonzero residuals)."""


class Infeasible(EsregError):
    pass


class ZeroVariance(EsregError, ValueError):
    pass


class BadDegrees(EsregError, ValueError):
    pass


class NotConverged(UserWarning):
    """Iteration cap reached before the stopping rule was met."""


def warn_not_converged(what, iterations, gnorm):
    warnings.warn(
        f"{what} stopped after {iterations} iterations with gradient norm {gnorm:.3e}",
        NotConverged,
        stacklevel=3,
    )


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Design matrix ``x`` (n x p, column 0 the intercept) and response ``y``."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = _frozen(self.x)
        y = _frozen(self.y).reshape(-1)
        if x.ndim != 2:
            raise ValueError("x must be a 2-d array")
        n, p = x.shape
        if y.shape[0] != n:
            raise ValueError(f"x has {n} rows but y has {y.shape[0]} entries")
        if not (n >= p >= 1):
            raise ValueError(f"need n >= p >= 1, got n={n}, p={p}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("x and y must be finite")
        if np.any(x[:, 0] != 1.0):
            raise ValueError("column 0 of x must be the intercept (all ones)")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def p(self):
        return self.x.shape[1]

    @classmethod
    def with_intercept(cls, covariates, y):
        """Build a dataset from raw covariates, prepending the intercept column."""
        z = np.asarray(covariates, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        return cls(np.column_stack([np.ones(z.shape[0]), z]), y)


@dataclass(frozen=True)
class SolverControl:
    tol: float = 1e-8
    max_iter: int = 5000
    seed: int = 0

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not (0 <= self.seed <= _MASK64):
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class FitDiagnostics:
    iterations: int
    converged: bool
    final_gradient_norm: float
    objective: float

    def to_dict(self):
        return {
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "final_gradient_norm": float(self.final_gradient_norm),
            "objective": float(self.objective),
        }


def cholesky_factor(a):
    """Lower Cholesky factor of ``a`` with an explicit rank check on the pivots."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    scale = max(np.max(np.abs(a)), np.finfo(float).tiny)
    if np.max(np.abs(a - a.T)) > 1e-10 * scale:
        raise ValueError("matrix is not symmetric")
    p = a.shape[0]
    try:
        low = scipy.linalg.cholesky(a, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    threshold = p * np.finfo(float).eps * np.max(np.diag(a))
    if np.min(np.diag(low) ** 2) <= threshold:
        raise NotPositiveDefinite("matrix is numerically singular")
    return low


def cholesky_solve(a, b):
    """Solve ``a @ x = b`` for symmetric positive-definite ``a``."""
    low = cholesky_factor(a)
    return scipy.linalg.cho_solve((low, True), np.asarray(b, dtype=float), check_finite=False)


def sym_inverse(a):
    """Inverse of an SPD matrix, symmetrised."""
    inv = cholesky_solve(a, np.eye(np.shape(a)[0]))
    return 0.5 * (inv + inv.T)


def gram(x):
    """Sample second-moment matrix ``x.T @ x / n``."""
    x = np.asarray(x, dtype=float)
    g = x.T @ x / x.shape[0]
    return 0.5 * (g + g.T)


def solve_normal_equations(x, y, what="design"):
    """Least squares via the normal equations; rank deficiency is an error."""
    x = np.asarray(x, dtype=float)
    try:
        return cholesky_solve(x.T @ x, x.T @ np.asarray(y, dtype=float))
    except NotPositiveDefinite:
        raise DegenerateDesign(f"{what} is rank deficient") from None


def _splitmix_finalize(z):
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & _MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK64
    return z ^ (z >> 31)


def split_seed(seed, replication):
    """Derive the seed of one replication stream from a master seed.

    For a fixed master seed the map is a bijection of the 64-bit counter, so
    distinct replications never share a stream.
    """
    state = (int(seed) + (int(replication) + 1) * _GOLDEN64) & _MASK64
    return _splitmix_finalize(state)


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(int(seed) & _MASK64))
