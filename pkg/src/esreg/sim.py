"""Synthetic designs, true-coefficient oracles and the Monte Carlo harness.

Three generators are provided:

* ``hetero``: Y = X'gamma* + (X'eta*) eps with X_ij ~ Unif(0, 1.5),
  gamma* Rademacher and eta* = 0.5 Bernoulli(1/2), no intercept in the
  generative model (an intercept column is still fitted).
* ``noncross``: Y = 2 + X'gamma* + (X'eta*) eps with X_ij ~ Unif(0, 2),
  eta* = (0.5, 0.5, 0, ...) and gamma* uniform on a sphere.
* ``qar``: the quantile autoregression Y_t = F^{-1}(U_t) + (a0 + a1 U_t) Y_{t-1}
  + Z_{t-1} (b0 + b1 U_t) with U_t, Z_t ~ Unif(0, 1).
"""

from __future__ import annotations

import functools
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate, special, stats

from .core import (
    BadDegrees,
    Dataset,
    EsregError,
    NotConverged,
    SolverControl,
    make_rng,
    split_seed,
)
from .es import es_ls_fit, two_step_oracle_fit
from .huber import adaptive_huber_es
from .inference import es_inference
from .noncross import nc_es_huber_fit, nc_es_ls_fit
from .qr import smoothed_qr_fit

MODELS = ("hetero", "noncross", "qar")
LABELS = {
    "ls": "2S-LS",
    "huber": "2S-AH",
    "oracle": "2S-oracle",
    "nc_ls": "NC-LS",
    "nc_huber": "NC-AH",
}
# methods that come with confidence intervals
INFERENCE_METHODS = ("ls", "huber")
BASE_METRICS = ("rel_error", "sq_error", "crossings")
CI_METRICS = ("coverage", "width")
MODEL_STREAM = 2**64 - 1


@dataclass(frozen=True)
class Dist:
    """Noise law: standard normal or Student t with ``df`` > 2 degrees of freedom."""

    kind: str = "normal"
    df: Optional[float] = None

    def __post_init__(self):
        if self.kind == "normal":
            if self.df is not None:
                raise ValueError("normal distribution takes no degrees of freedom")
        elif self.kind == "t":
            if self.df is None or not math.isfinite(self.df) or self.df <= 2:
                raise BadDegrees(f"need df > 2 for finite variance, got {self.df}")
        else:
            raise ValueError(f"unknown distribution {self.kind!r}")

    @classmethod
    def normal(cls):
        return cls("normal")

    @classmethod
    def student_t(cls, df):
        return cls("t", float(df))

    @classmethod
    def parse(cls, text):
        """'normal' or 't<df>' (e.g. 't2.5')."""
        text = str(text).strip().lower()
        if text in ("normal", "gaussian", "n"):
            return cls.normal()
        if text.startswith("t"):
            try:
                return cls.student_t(float(text[1:]))
            except ValueError:
                raise ValueError(f"cannot parse distribution {text!r}") from None
        raise ValueError(f"cannot parse distribution {text!r}")

    @property
    def label(self):
        return "normal" if self.kind == "normal" else f"t{self.df:g}"

    def _law(self):
        return stats.norm() if self.kind == "normal" else stats.t(self.df)

    def ppf(self, u):
        # scipy.special avoids rebuilding a frozen law inside quadrature loops
        if self.kind == "normal":
            return special.ndtri(u)
        return special.stdtrit(self.df, u)

    def pdf(self, x):
        return self._law().pdf(x)

    def sample(self, rng, size):
        z = rng.standard_normal(size)
        if self.kind == "normal":
            return z
        return z / np.sqrt(rng.chisquare(self.df, size) / self.df)


def closed_form_es(dist: Dist, alpha):
    """Lower-tail ES from the density at the quantile."""
    q = float(dist.ppf(alpha))
    if dist.kind == "normal":
        return float(-stats.norm.pdf(q) / alpha)
    nu = dist.df
    return float(-(stats.t.pdf(q, nu) / alpha) * (nu + q * q) / (nu - 1.0))


@functools.lru_cache(maxsize=256)
def dist_quantile_es(dist: Dist, alpha):
    """(Q_alpha, ES_alpha) with ES the average of the quantile function over (0, alpha).

    The integral is evaluated by adaptive quadrature after the change of
    variable u = alpha s, with a split near zero where the quantile function
    diverges.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    q = float(dist.ppf(alpha))
    val, _ = integrate.quad(
        lambda s: float(dist.ppf(alpha * s)), 0.0, 1.0, points=[1e-6, 1e-3], limit=500,
        epsabs=1e-13, epsrel=1e-12,
    )
    return q, float(val)


@dataclass(frozen=True)
class TrueCoefficients:
    beta_star: np.ndarray
    theta_star: np.ndarray
    q_eps: float
    es_eps: float


def _true_coefficients(intercept, gamma, eta, q, es):
    beta = np.concatenate([[intercept], gamma + eta * q])
    theta = np.concatenate([[intercept], gamma + eta * es])
    return TrueCoefficients(beta, theta, q, es)


@dataclass(frozen=True)
class HeteroModel:
    """Location-scale linear model Y = c + X'gamma* + (X'eta*) eps."""

    p: int
    dist: Dist
    alpha: float
    gamma_star: np.ndarray
    eta_star: np.ndarray
    intercept: float = 0.0
    x_high: float = 1.5

    def __post_init__(self):
        g = np.array(self.gamma_star, dtype=float).reshape(-1)
        e = np.array(self.eta_star, dtype=float).reshape(-1)
        if g.size != self.p or e.size != self.p:
            raise ValueError("gamma_star and eta_star must have length p")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        g.setflags(write=False)
        e.setflags(write=False)
        object.__setattr__(self, "gamma_star", g)
        object.__setattr__(self, "eta_star", e)

    @classmethod
    def draw(cls, p, dist, alpha, rng):
        """Rademacher gamma*, eta* = 0.5 Bernoulli(1/2), X ~ Unif(0, 1.5)."""
        gamma = rng.choice([-1.0, 1.0], size=p)
        eta = 0.5 * rng.integers(0, 2, size=p)
        return cls(p, dist, alpha, gamma, eta)

    @classmethod
    def noncross(cls, p, dist, alpha, rng):
        """Intercept 2, X ~ Unif(0, 2), eta* = (0.5, 0.5, 0, ...), gamma* on a sphere.

        The sphere has radius 1 for normal noise and sqrt(5) otherwise.
        """
        if p < 2:
            raise ValueError("the non-crossing design needs p >= 2")
        g = rng.standard_normal(p)
        g *= (1.0 if dist.kind == "normal" else math.sqrt(5.0)) / np.linalg.norm(g)
        eta = np.zeros(p)
        eta[:2] = 0.5
        return cls(p, dist, alpha, g, eta, intercept=2.0, x_high=2.0)

    def truth(self):
        q, es = dist_quantile_es(self.dist, self.alpha)
        if not es < q:
            raise AssertionError("ES must lie strictly below the quantile")
        return _true_coefficients(self.intercept, self.gamma_star, self.eta_star, q, es)


def gen_hetero(model: HeteroModel, n, seed, truth=None):
    """Draw n rows; returns the dataset (intercept column prepended) and the truth."""
    if n < model.p + 1:
        raise ValueError("need n > p")
    rng = make_rng(seed)
    z = rng.uniform(0.0, model.x_high, size=(n, model.p))
    eps = model.dist.sample(rng, n)
    y = model.intercept + z @ model.gamma_star + (z @ model.eta_star) * eps
    return Dataset.with_intercept(z, y), model.truth() if truth is None else truth


@dataclass(frozen=True)
class QarModel:
    a0: float = 0.5
    a1: float = 0.5
    b0: float = 0.95
    b1: float = 0.5
    dist: Dist = field(default_factory=Dist.normal)
    burn_in: int = 20

    def __post_init__(self):
        # a1 = b1 = 0 is allowed: it is the constant-coefficient AR limit
        if not (self.a0 > 0 and self.a1 >= 0 and self.b1 >= 0):
            raise ValueError("need a0 > 0 and a1, b1 >= 0")
        if self.a0 + self.a1 > 1:
            raise ValueError("need a0 + a1 <= 1")
        if self.burn_in < 0:
            raise ValueError("burn_in must be nonnegative")

    def truth(self, alpha):
        q, es = dist_quantile_es(self.dist, alpha)
        beta = np.array([q, self.a0 + self.a1 * alpha, self.b0 + self.b1 * alpha])
        theta = np.array([es, self.a0 + 0.5 * self.a1 * alpha, self.b0 + 0.5 * self.b1 * alpha])
        return TrueCoefficients(beta, theta, q, es)


@dataclass(frozen=True)
class QarSample:
    data: Dataset
    truth: TrueCoefficients
    violations: int


def _qar_path(model: QarModel, u, zs):
    """Y_1..Y_T from Y_0 = 0 given U_1..U_T and Z_0..Z_{T-1}."""
    eps = model.dist.ppf(u)
    y = np.zeros(u.size + 1)
    for t in range(1, u.size + 1):
        ut = u[t - 1]
        y[t] = eps[t - 1] + (model.a0 + model.a1 * ut) * y[t - 1] + zs[t - 1] * (model.b0 + model.b1 * ut)
    return y


def gen_qar(model: QarModel, t_len, alpha, seed):
    """Simulate T + burn-in steps and keep the last T rows (1, Y_{t-1}, Z_{t-1}) -> Y_t.

    ``violations`` counts kept rows where u -> RHS fails to be increasing for
    the realised lags, i.e. 1/f(0) + a1 Y_{t-1} + b1 Z_{t-1} <= 0 (the density
    of a symmetric unimodal F peaks at 0).
    """
    if t_len < 1:
        raise ValueError("t_len must be positive")
    rng = make_rng(seed)
    total = t_len + model.burn_in
    u = rng.uniform(size=total)
    zs = rng.uniform(size=total)
    y = _qar_path(model, u, zs)
    keep = slice(model.burn_in, None)
    x = np.column_stack([np.ones(t_len), y[:-1][keep], zs[keep]])
    slope = 1.0 / float(model.dist.pdf(0.0)) + model.a1 * x[:, 1] + model.b1 * x[:, 2]
    violations = int(np.count_nonzero(slope <= 0))
    return QarSample(Dataset(x, y[1:][keep]), model.truth(alpha), violations)


# ---------------------------------------------------------------------------
# replication harness


@dataclass(frozen=True)
class SimConfig:
    model: str = "hetero"
    dist: Dist = field(default_factory=lambda: Dist.student_t(2.5))
    p: int = 20
    alpha: float = 0.1
    n: Optional[int] = None
    reps: int = 200
    methods: tuple = ("ls", "huber", "oracle")
    level: float = 0.95
    seed: int = 0
    gamma: Optional[float] = None
    bandwidth: Optional[float] = None
    include_intercept: Optional[bool] = None
    redraw: bool = False
    qar: tuple = (0.5, 0.5, 0.95, 0.5)
    tol: float = 1e-8
    max_iter: int = 5000

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}")
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if not 0 < self.alpha < 1 or not 0 < self.level < 1:
            raise ValueError("alpha and level must lie in (0, 1)")
        bad = [m for m in self.methods if m not in LABELS]
        if bad or not self.methods:
            raise ValueError(f"unknown methods {bad}; choose from {list(LABELS)}")
        if self.model == "qar" and self.p != 2:
            object.__setattr__(self, "p", 2)
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.n is not None and self.n <= self.p:
            raise ValueError("n must exceed p")

    @property
    def sample_size(self):
        if self.n is not None:
            return int(self.n)
        if self.model == "hetero":
            # round before ceil so that 50 * 20 / 0.1 stays 10000
            return int(math.ceil(round(50.0 * self.p / self.alpha, 9)))
        if self.model == "noncross":
            return 5000 if self.dist.kind == "normal" else 10000
        return 1000 if self.dist.kind == "normal" else 1500

    @property
    def intercept_in_error(self):
        if self.include_intercept is not None:
            return bool(self.include_intercept)
        return self.model != "hetero"

    def to_dict(self):
        return {
            "model": self.model,
            "dist": self.dist.label,
            "p": self.p,
            "alpha": self.alpha,
            "n": self.sample_size,
            "reps": self.reps,
            "methods": list(self.methods),
            "level": self.level,
            "seed": self.seed,
            "gamma": self.gamma,
            "bandwidth": self.bandwidth,
            "include_intercept": self.intercept_in_error,
            "redraw": self.redraw,
            "qar": list(self.qar) if self.model == "qar" else None,
        }


def metrics_for(method):
    return BASE_METRICS + CI_METRICS if method in INFERENCE_METHODS else BASE_METRICS


def build_model(config: SimConfig, rng):
    if config.model == "hetero":
        return HeteroModel.draw(config.p, config.dist, config.alpha, rng)
    if config.model == "noncross":
        return HeteroModel.noncross(config.p, config.dist, config.alpha, rng)
    a0, a1, b0, b1 = config.qar
    return QarModel(a0, a1, b0, b1, config.dist)


def _draw(config, model, truth, seed):
    if config.model == "qar":
        sample = gen_qar(model, config.sample_size, config.alpha, seed)
        return sample.data, sample.truth, sample.violations
    data, truth = gen_hetero(model, config.sample_size, seed, truth)
    return data, truth, 0


def _fit_method(method, data, beta, truth, config, control):
    alpha = config.alpha
    if method == "ls":
        return es_ls_fit(data, beta, alpha)
    if method == "huber":
        return adaptive_huber_es(data, beta, alpha, control)[0]
    if method == "oracle":
        return two_step_oracle_fit(data, truth.beta_star, alpha)
    if method == "nc_ls":
        return nc_es_ls_fit(data, beta, alpha)
    return nc_es_huber_fit(data, beta, alpha, control)


def _method_record(method, fit, data, beta, truth, config):
    start = 0 if config.intercept_in_error else 1
    err = fit.theta[start:] - truth.theta_star[start:]
    sq = float(err @ err)
    rec = {
        "failed": False,
        "rel_error": math.sqrt(sq) / float(np.linalg.norm(truth.theta_star[start:])),
        "sq_error": sq,
        "crossings": int(fit.crossings),
        "tau": None if fit.tau is None or not math.isfinite(fit.tau) else fit.tau,
        "converged": True if fit.diagnostics is None else bool(fit.diagnostics.converged),
    }
    if method in INFERENCE_METHODS:
        robust = method == "huber"
        inf = es_inference(data, beta, fit.theta, config.alpha, config.level, robust, config.gamma)
        covered = (inf.ci_lower <= truth.theta_star) & (truth.theta_star <= inf.ci_upper)
        width = inf.width
        rec["covered"] = [bool(c) for c in covered]
        rec["width_vector"] = [float(w) for w in width]
        rec["coverage"] = float(np.mean(covered[1:]))
        rec["width"] = float(np.mean(width[1:]))
    return rec


def _failed(method, exc):
    return {"failed": True, "error": f"{type(exc).__name__}: {exc}"}


def run_one(config: SimConfig, rep, model=None, truth=None, timing=False):
    """One replication: data, first-stage QR, each requested method."""
    seed = split_seed(config.seed, rep)
    if model is None or config.redraw:
        model = build_model(config, make_rng(split_seed(seed, MODEL_STREAM)))
        truth = None
    control = SolverControl(config.tol, config.max_iter, seed)
    out = {"rep": rep, "seed": seed, "methods": {}}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", NotConverged)
        data, truth, violations = _draw(config, model, truth, seed)
        if config.model == "qar":
            out["violations"] = violations
        try:
            beta = smoothed_qr_fit(data, config.alpha, config.bandwidth, control).beta
        except (EsregError, ValueError, np.linalg.LinAlgError) as exc:
            for m in config.methods:
                out["methods"][m] = _failed(m, exc)
            return out
        for m in config.methods:
            t0 = time.perf_counter()
            try:
                fit = _fit_method(m, data, beta, truth, config, control)
                rec = _method_record(m, fit, data, beta, truth, config)
            except (EsregError, ValueError, np.linalg.LinAlgError) as exc:
                rec = _failed(m, exc)
            if timing:
                rec["elapsed"] = time.perf_counter() - t0
            out["methods"][m] = rec
    out["warnings"] = sum(issubclass(w.category, NotConverged) for w in caught)
    return out


def _worker(args):
    config, reps, timing = args
    model, truth = _shared_model(config)
    return [run_one(config, r, model, truth, timing) for r in reps]


def _shared_model(config):
    if config.redraw:
        return None, None
    model = build_model(config, make_rng(split_seed(config.seed, MODEL_STREAM)))
    return model, (model.truth(config.alpha) if config.model == "qar" else model.truth())


def aggregate(records, methods):
    """Mean and standard error of every metric, over non-failed replications."""
    agg = {}
    for m in methods:
        rows = [r["methods"][m] for r in records if not r["methods"][m]["failed"]]
        entry = {"failures": len(records) - len(rows)}
        for metric in metrics_for(m):
            vals = np.array([row[metric] for row in rows], dtype=float)
            k = vals.size
            mean = float(np.mean(vals)) if k else None
            se = float(np.std(vals, ddof=1) / math.sqrt(k)) if k > 1 else (0.0 if k else None)
            entry[metric] = {"mean": mean, "se": se}
        agg[m] = entry
    return agg


@dataclass
class SimulationReport:
    config: SimConfig
    records: list
    aggregates: dict = field(default_factory=dict)
    truth: Optional[dict] = None

    def mean(self, method, metric):
        return self.aggregates[method][metric]["mean"]

    def se(self, method, metric):
        return self.aggregates[method][metric]["se"]

    def failures(self, method):
        return self.aggregates[method]["failures"]

    def to_dict(self):
        return {
            "config": self.config.to_dict(),
            "truth": self.truth,
            "aggregates": self.aggregates,
            "records": self.records,
        }

    def summary_rows(self):
        """(method, metric, mean, se) rows in a fixed order."""
        rows = []
        for m in self.config.methods:
            for metric in metrics_for(m):
                cell = self.aggregates[m][metric]
                rows.append((m, metric, cell["mean"], cell["se"]))
        return rows


def run_replications(config: SimConfig, threads=1, timing=False):
    """Run ``config.reps`` replications and aggregate.

    Replication k uses seed split_seed(config.seed, k), so results do not
    depend on ``threads``; records are returned in replication order.
    """
    model, truth = _shared_model(config)
    reps = list(range(config.reps))
    threads = max(1, min(int(threads), config.reps))
    if threads == 1:
        records = [run_one(config, r, model, truth, timing) for r in reps]
    else:
        chunks = [reps[i::threads] for i in range(threads)]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_worker, [(config, c, timing) for c in chunks]))
        records = sorted((rec for part in parts for rec in part), key=lambda r: r["rep"])
    truth_dict = None
    if truth is not None:
        truth_dict = {
            "beta_star": truth.beta_star.tolist(),
            "theta_star": truth.theta_star.tolist(),
            "q_eps": truth.q_eps,
            "es_eps": truth.es_eps,
        }
    return SimulationReport(config, records, aggregate(records, config.methods), truth_dict)


__all__ = [
    "Dist",
    "HeteroModel",
    "LABELS",
    "QarModel",
    "QarSample",
    "SimConfig",
    "SimulationReport",
    "TrueCoefficients",
    "aggregate",
    "closed_form_es",
    "dist_quantile_es",
    "gen_hetero",
    "gen_qar",
    "metrics_for",
    "run_one",
    "run_replications",
]
