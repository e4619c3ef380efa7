"""Command-line front end: ``esreg fit``, ``esreg simulate`` and ``esreg replicate``.

Exit codes: 0 success, 2 bad input or configuration, 3 solver failure,
4 a replication band failed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
import warnings

import numpy as np

from .core import Dataset, EsregError, SolverControl
from .es import es_ls_fit
from .huber import adaptive_huber_es
from .inference import es_inference
from .noncross import nc_es_huber_fit, nc_es_ls_fit
from .qr import smoothed_qr_fit
from .sim import LABELS, MODELS, Dist, SimConfig, run_replications
from .tables import NOMINAL_REPS, TABLES, check_table, is_advisory, table_configs

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

EXIT_OK, EXIT_INPUT, EXIT_SOLVER, EXIT_BAND = 0, 2, 3, 4
FIT_METHODS = ("ls", "huber", "nc-ls", "nc-huber")


class InputError(Exception):
    pass


class SolverFailure(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def _clean(obj):
    """Replace non-finite floats by None so the JSON stays strict."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj):
    return json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n"


def _atomic_write(path, text):
    """Write via a temporary file in the same directory so failures leave nothing behind."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".esreg-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _emit(text, output):
    if output in (None, "-"):
        sys.stdout.write(text)
    else:
        try:
            _atomic_write(output, text)
        except OSError as exc:
            raise InputError(f"cannot write {output}: {exc}") from None


def default_threads():
    env = os.environ.get("ESREG_THREADS")
    if env:
        try:
            val = int(env)
        except ValueError:
            raise InputError(f"ESREG_THREADS must be an integer, got {env!r}") from None
        if val < 1:
            raise InputError("ESREG_THREADS must be positive")
        return val
    return os.cpu_count() or 1


def _threads(args):
    if args.threads is not None:
        if args.threads < 1:
            raise InputError("--threads must be positive")
        return args.threads
    return default_threads()


def _unit_interval(name, value):
    if not 0 < value < 1:
        raise InputError(f"{name} must lie in (0, 1), got {value}")
    return value


# ---------------------------------------------------------------------------
# fit


def read_csv(path, response):
    """Parse a headed numeric CSV; returns (covariate names, covariates, y)."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except (OSError, UnicodeDecodeError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    rows = [r for r in rows if r]
    if len(rows) < 2:
        raise InputError(f"{path}: need a header row and at least one data row")
    header = [h.strip() for h in rows[0]]
    if response in header:
        col = header.index(response)
    else:
        try:
            col = int(response)
        except ValueError:
            raise InputError(f"{path}: no column named {response!r}") from None
        if not 0 <= col < len(header):
            raise InputError(f"{path}: column index {col} out of range")
    values = np.empty((len(rows) - 1, len(header)))
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise InputError(f"{path}:{i}: expected {len(header)} fields, got {len(row)}")
        for j, cell in enumerate(row):
            try:
                values[i - 2, j] = float(cell)
            except ValueError:
                raise InputError(f"{path}:{i}: non-numeric value {cell!r} in column {header[j]!r}") from None
    if not np.all(np.isfinite(values)):
        raise InputError(f"{path}: non-finite values are not allowed")
    names = [h for j, h in enumerate(header) if j != col]
    return names, np.delete(values, col, axis=1), values[:, col]


def fit_document(data: Dataset, alpha, method, level=0.95, gamma=None, bandwidth=None, seed=0):
    """The JSON document written by ``esreg fit`` (library-level, no I/O)."""
    control = SolverControl(seed=seed)
    stage = "quantile regression"
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            qfit = smoothed_qr_fit(data, alpha, bandwidth, control)
            beta = qfit.beta
            stage = "expected shortfall regression"
            if method == "ls":
                fit = es_ls_fit(data, beta, alpha)
            elif method == "huber":
                fit = adaptive_huber_es(data, beta, alpha, control)[0]
            elif method == "nc-ls":
                fit = nc_es_ls_fit(data, beta, alpha)
            else:
                fit = nc_es_huber_fit(data, beta, alpha, control)
            stage = "inference"
            robust = method in ("huber", "nc-huber") or gamma is not None
            inf = es_inference(data, beta, fit.theta, alpha, level, robust, gamma)
    except (EsregError, np.linalg.LinAlgError) as exc:
        raise SolverFailure(f"{stage} failed: {type(exc).__name__}: {exc}") from None
    return {
        "alpha": alpha,
        "method": method,
        "beta": beta.tolist(),
        "theta": fit.theta.tolist(),
        "tau": fit.tau,
        "se": inf.se.tolist(),
        "ci_lower": inf.ci_lower.tolist(),
        "ci_upper": inf.ci_upper.tolist(),
        "gamma": inf.gamma,
        "crossings": fit.crossings,
        "diagnostics": {
            "quantile": qfit.diagnostics.to_dict(),
            "es": None if fit.diagnostics is None else fit.diagnostics.to_dict(),
        },
    }


def cmd_fit(args):
    alpha = _unit_interval("--alpha", args.alpha)
    level = _unit_interval("--level", args.level)
    if args.gamma is not None and not args.gamma > 0:
        raise InputError("--gamma must be positive")
    if args.bandwidth is not None and not args.bandwidth > 0:
        raise InputError("--bandwidth must be positive")
    names, covariates, y = read_csv(args.input, args.response)
    try:
        data = Dataset.with_intercept(covariates, y)
    except ValueError as exc:
        raise InputError(f"{args.input}: {exc}") from None
    doc = fit_document(data, alpha, args.method, level, args.gamma, args.bandwidth, args.seed)
    doc["columns"] = ["(intercept)"] + names
    _emit(dumps(doc), args.output)
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate

CONFIG_KEYS = {
    "model", "dist", "p", "alpha", "n", "reps", "methods", "level", "seed", "gamma",
    "bandwidth", "include_intercept", "redraw", "qar",
}


def load_config(path):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    try:
        if path.endswith(".json"):
            cfg = json.loads(raw.decode("utf-8"))
        else:
            cfg = tomllib.loads(raw.decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise InputError(f"{path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise InputError(f"{path}: top level must be a table/object")
    unknown = sorted(set(cfg) - CONFIG_KEYS)
    if unknown:
        raise InputError(f"{path}: unknown keys {unknown}")
    return cfg


def _method_name(m):
    m = str(m).replace("-", "_")
    if m not in LABELS:
        raise InputError(f"unknown method {m!r}; choose from {sorted(LABELS)}")
    return m


def build_sim_config(cfg: dict):
    """SimConfig from a parsed config mapping (missing keys take defaults)."""
    kw = {}
    try:
        if "model" in cfg:
            kw["model"] = str(cfg["model"])
        if "dist" in cfg:
            kw["dist"] = Dist.parse(cfg["dist"])
        for key, conv in (("p", int), ("alpha", float), ("reps", int), ("level", float), ("seed", int)):
            if key in cfg:
                kw[key] = conv(cfg[key])
        if "n" in cfg and cfg["n"] not in (None, "auto"):
            kw["n"] = int(cfg["n"])
        if "methods" in cfg:
            kw["methods"] = tuple(_method_name(m) for m in cfg["methods"])
        for key in ("gamma", "bandwidth"):
            if cfg.get(key) is not None:
                kw[key] = float(cfg[key])
        if "include_intercept" in cfg:
            kw["include_intercept"] = bool(cfg["include_intercept"])
        if "redraw" in cfg:
            kw["redraw"] = bool(cfg["redraw"])
        if "qar" in cfg:
            q = cfg["qar"]
            kw["qar"] = tuple(float(q[k]) for k in ("a0", "a1", "b0", "b1")) if isinstance(q, dict) else tuple(map(float, q))
        return SimConfig(**kw)
    except (TypeError, ValueError, KeyError) as exc:
        raise InputError(f"invalid configuration: {exc}") from None


SUMMARY_HEADER = ("alpha", "method", "label", "metric", "mean", "se", "failures")


def summary_csv(reports):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_HEADER)
    for rep in reports:
        for method, metric, mean, se in rep.summary_rows():
            w.writerow([
                repr(rep.config.alpha), method, LABELS[method], metric,
                "" if mean is None else repr(mean), "" if se is None else repr(se),
                rep.failures(method),
            ])
    return buf.getvalue()


def report_document(reports, table=None):
    return {"table": table, "runs": [r.to_dict() for r in reports]}


def cmd_simulate(args):
    if args.table:
        try:
            configs = list(table_configs(args.table, args.reps, args.scale, args.seed, args.gamma).values())
        except ValueError as exc:
            raise InputError(str(exc)) from None
    else:
        cfg = load_config(args.config) if args.config else {}
        flags = {
            "model": args.model, "dist": args.dist, "p": args.p, "alpha": args.alpha, "n": args.n,
            "reps": args.reps, "level": args.level, "seed": args.seed, "gamma": args.gamma,
            "bandwidth": args.bandwidth,
        }
        cfg.update({k: v for k, v in flags.items() if v is not None})
        if args.methods:
            cfg["methods"] = args.methods.split(",")
        if args.redraw:
            cfg["redraw"] = True
        configs = [build_sim_config(cfg)]
    threads = _threads(args)
    reports = [run_replications(c, threads=threads, timing=args.timing) for c in configs]
    outdir = args.outdir
    try:
        os.makedirs(outdir, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create {outdir}: {exc}") from None
    report_text = dumps(report_document(reports, args.table))
    summary_text = summary_csv(reports)
    _emit(report_text, os.path.join(outdir, "report.json"))
    _emit(summary_text, os.path.join(outdir, "summary.csv"))
    if not args.quiet:
        sys.stdout.write(summary_text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# replicate


def cmd_replicate(args):
    if args.reps is not None and args.reps < 1:
        raise InputError("--reps must be positive")
    if not args.scale > 0:
        raise InputError("--scale must be positive")
    configs = table_configs(args.table, args.reps, args.scale, args.seed)
    threads = _threads(args)
    reports = {a: run_replications(c, threads=threads) for a, c in configs.items()}
    checks = check_table(args.table, reports)
    advisory = is_advisory(args.table, args.reps, args.scale)
    reps = NOMINAL_REPS[args.table] if args.reps is None else args.reps
    print(f"# {args.table}: {reps} replications, scale {args.scale:g}, seed {args.seed}")
    if advisory:
        print(f"# advisory run (nominal {NOMINAL_REPS[args.table]} replications at scale 1): bands are informational")
    for c in checks:
        print(c.line(advisory))
    failed = sum(not c.passed for c in checks)
    print(f"# {len(checks) - failed}/{len(checks)} checks passed")
    if args.output:
        _emit(dumps(report_document(list(reports.values()), args.table)), args.output)
    return EXIT_BAND if failed and not advisory else EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="esreg", description="Two-step expected shortfall regression.")
    sub = parser.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit quantile and ES regressions to a CSV file")
    f.add_argument("input", help="CSV with a header row; all cells numeric")
    f.add_argument("--response", "-y", required=True, help="response column name or 0-based index")
    f.add_argument("--alpha", type=float, required=True)
    f.add_argument("--method", choices=FIT_METHODS, default="huber")
    f.add_argument("--level", type=float, default=0.95)
    f.add_argument("--gamma", type=float, default=None, help="truncation level for the covariance (inf: none)")
    f.add_argument("--bandwidth", type=float, default=None, help="smoothing bandwidth for the quantile fit")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--output", "-o", default=None, help="output path (default stdout)")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="run a Monte Carlo study")
    s.add_argument("--config", help="TOML or JSON configuration file")
    s.add_argument("--table", choices=TABLES, help="use a published-table preset")
    s.add_argument("--model", choices=MODELS)
    s.add_argument("--dist", help="'normal' or 't<df>', e.g. t2.5")
    s.add_argument("--p", type=int)
    s.add_argument("--alpha", type=float)
    s.add_argument("--n", type=int, help="sample size (default depends on the model)")
    s.add_argument("--reps", type=int)
    s.add_argument("--methods", help="comma separated, e.g. ls,huber,oracle")
    s.add_argument("--level", type=float)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--gamma", type=float)
    s.add_argument("--bandwidth", type=float)
    s.add_argument("--redraw", action="store_true", help="redraw gamma*/eta* every replication")
    s.add_argument("--scale", type=float, default=1.0, help="sample-size multiplier for --table")
    s.add_argument("--threads", type=int, default=None)
    s.add_argument("--timing", action="store_true", help="record wall times (report no longer reproducible)")
    s.add_argument("--outdir", default=".")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("replicate", help="rerun a published table and check it against reference bands")
    r.add_argument("table", choices=TABLES)
    r.add_argument("--reps", type=int, default=None)
    r.add_argument("--scale", type=float, default=1.0)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--threads", type=int, default=None)
    r.add_argument("--output", default=None, help="also write the full report as JSON")
    r.set_defaults(func=cmd_replicate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "command", None) == "simulate":
        if args.table and args.config:
            parser.error("--table and --config are mutually exclusive")
        if args.seed is None:
            args.seed = 0 if args.table else None
    try:
        return args.func(args)
    except InputError as exc:
        print(f"esreg: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SolverFailure as exc:
        print(f"esreg: solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
