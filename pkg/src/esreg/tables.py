"""Published reference values and the band checks used by ``esreg replicate``."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

from .sim import Dist, SimConfig, SimulationReport, run_replications

ALPHAS = (0.05, 0.1, 0.2)

# mean relative l2-error, p = 20, n = ceil(50 p / alpha)
RELERR = {
    "t2.5": {
        "huber": (0.484, 0.470, 0.429),
        "ls": (0.612, 0.606, 0.532),
        "oracle": (0.612, 0.607, 0.532),
    },
    "normal": {
        "huber": (0.130, 0.150, 0.171),
        "ls": (0.130, 0.150, 0.171),
        "oracle": (0.129, 0.149, 0.171),
    },
}
# (coverage, mean width) of 95% intervals averaged over the slopes
COVERAGE = {
    "t2.5": {
        "huber": ((0.947, 3.633), (0.946, 2.790), (0.948, 2.243)),
        "ls": ((0.952, 4.521), (0.950, 3.397), (0.953, 2.687)),
    },
    "normal": {
        "huber": ((0.950, 0.595), (0.949, 0.660), (0.948, 0.744)),
        "ls": ((0.950, 0.595), (0.949, 0.661), (0.948, 0.745)),
    },
}
# squared l2-error (intercept included), normal noise, n = 5000, p = 10, alpha = 0.1
NONCROSS_MSE = {"ls": 0.0534, "nc_ls": 0.0407, "huber": 0.0532, "nc_huber": 0.0408}

TABLES = ("t-relerr", "normal-relerr", "t-coverage", "normal-coverage", "noncross-fig")
NOMINAL_REPS = {
    "t-relerr": 200,
    "normal-relerr": 200,
    "t-coverage": 500,
    "normal-coverage": 500,
    "noncross-fig": 500,
}
RELERR_BAND = {"t2.5": 0.05, "normal": 0.02}
COVERAGE_BAND = (0.92, 0.97)
WIDTH_BAND = 0.4
AGREEMENT = 0.005
MSE_REL_BAND = 0.30


@dataclass(frozen=True)
class Check:
    label: str
    value: float
    passed: bool
    reference: Optional[float] = None
    low: Optional[float] = None
    high: Optional[float] = None

    def line(self, advisory=False):
        ref = "" if self.reference is None else f" reference={self.reference:.4g}"
        band = ""
        if self.low is not None or self.high is not None:
            lo = "-inf" if self.low is None else f"{self.low:.4g}"
            hi = "inf" if self.high is None else f"{self.high:.4g}"
            band = f" band=[{lo}, {hi}]"
        verdict = "PASS" if self.passed else ("ADVISORY-FAIL" if advisory else "FAIL")
        return f"{verdict:13s} {self.label}:{ref} ours={self.value:.4g}{band}"


def _band(label, value, low, high, reference=None):
    ok = (low is None or value >= low) and (high is None or value <= high)
    return Check(label, float(value), bool(ok and math.isfinite(value)), reference, low, high)


def _dist_of(name):
    return "t2.5" if name.startswith("t-") else "normal"


def table_configs(name, reps=None, scale=1.0, seed=0, gamma=None):
    """alpha -> SimConfig for a table; ``scale`` multiplies the sample size."""
    if name not in TABLES:
        raise ValueError(f"unknown table {name!r}; choose from {TABLES}")
    reps = NOMINAL_REPS[name] if reps is None else int(reps)
    if not scale > 0:
        raise ValueError("scale must be positive")
    if name == "noncross-fig":
        base = SimConfig(
            model="noncross",
            dist=Dist.normal(),
            p=10,
            alpha=0.1,
            reps=reps,
            methods=("ls", "nc_ls", "huber", "nc_huber"),
            seed=seed,
            gamma=gamma,
        )
        return {0.1: replace(base, n=max(base.p + 2, int(math.ceil(5000 * scale))))}
    out = {}
    for a in ALPHAS:
        cfg = SimConfig(
            model="hetero",
            dist=Dist.parse(_dist_of(name)),
            p=20,
            alpha=a,
            reps=reps,
            methods=("ls", "huber", "oracle"),
            seed=seed,
            gamma=gamma,
            redraw=True,
        )
        if scale != 1.0:
            cfg = replace(cfg, n=max(cfg.p + 2, int(math.ceil(cfg.sample_size * scale))))
        out[a] = cfg
    return out


def run_table(name, reps=None, scale=1.0, seed=0, threads=1, gamma=None):
    return {
        a: run_replications(cfg, threads=threads)
        for a, cfg in table_configs(name, reps, scale, seed, gamma).items()
    }


def check_table(name, reports: dict[float, SimulationReport]):
    """Band checks for one table given its reports (alpha -> report)."""
    dist = _dist_of(name)
    checks = []
    if name.endswith("relerr"):
        tol = RELERR_BAND[dist]
        for i, a in enumerate(ALPHAS):
            rep = reports[a]
            ah, ls = rep.mean("huber", "rel_error"), rep.mean("ls", "rel_error")
            ref_ah, ref_ls = RELERR[dist]["huber"][i], RELERR[dist]["ls"][i]
            checks.append(_band(f"2S-AH rel error a={a}", ah, ref_ah - tol, ref_ah + tol, ref_ah))
            if dist == "normal":
                checks.append(_band(f"2S-LS rel error a={a}", ls, ref_ls - tol, ref_ls + tol, ref_ls))
                checks.append(_band(f"|2S-AH - 2S-LS| a={a}", abs(ah - ls), None, AGREEMENT))
            else:
                checks.append(Check(f"2S-AH < 2S-LS a={a} (2S-LS={ls:.4g})", ah, bool(ah < ls), ref_ah))
    elif name.endswith("coverage"):
        lo, hi = COVERAGE_BAND
        for i, a in enumerate(ALPHAS):
            rep = reports[a]
            ref_cov, ref_w = COVERAGE[dist]["huber"][i]
            checks.append(_band(f"2S-AH coverage a={a}", rep.mean("huber", "coverage"), lo, hi, ref_cov))
            if dist == "t2.5" and a == 0.1:
                w, w_ls = rep.mean("huber", "width"), rep.mean("ls", "width")
                checks.append(_band(f"2S-AH width a={a}", w, ref_w - WIDTH_BAND, ref_w + WIDTH_BAND, ref_w))
                checks.append(Check(f"2S-AH width < 2S-LS width a={a} (2S-LS={w_ls:.4g})", w, bool(w < w_ls), ref_w))
    else:
        rep = reports[0.1]
        mse = {m: rep.mean(m, "sq_error") for m in NONCROSS_MSE}
        checks.append(Check(f"NC-LS MSE < LS MSE (LS={mse['ls']:.4g})", mse["nc_ls"], bool(mse["nc_ls"] < mse["ls"])))
        checks.append(
            Check(f"NC-AH MSE <= AH MSE (AH={mse['huber']:.4g})", mse["nc_huber"], bool(mse["nc_huber"] <= mse["huber"]))
        )
        for m in ("nc_ls", "nc_huber"):
            worst = max(
                (r["methods"][m].get("crossings", 0) for r in rep.records if not r["methods"][m]["failed"]),
                default=0,
            )
            fails = rep.failures(m)
            checks.append(Check(f"{m} max crossings per replication ({fails} failures)", worst, worst == 0 and fails == 0))
        for m, ref in NONCROSS_MSE.items():
            band = MSE_REL_BAND * ref
            checks.append(_band(f"{m} MSE", mse[m], ref - band, ref + band, ref))
    return checks


def is_advisory(name, reps, scale):
    """Runs below the nominal replication count or at a rescaled n only advise."""
    reps = NOMINAL_REPS[name] if reps is None else reps
    return reps < NOMINAL_REPS[name] or scale != 1.0
