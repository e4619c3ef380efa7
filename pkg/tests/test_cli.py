import csv
import io
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from esreg.cli import main, summary_csv
from esreg.core import Dataset, SolverControl
from esreg.es import es_ls_fit
from esreg.huber import adaptive_huber_es
from esreg.qr import smoothed_qr_fit
from esreg.sim import SimConfig, SimulationReport, aggregate, Dist


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return str(path)


@pytest.fixture
def data_csv(tmp_path):
    rng = np.random.default_rng(4)
    u = rng.uniform(0, 2, size=(300, 2))
    y = 1 + u @ [1.0, -0.5] + (0.5 + 0.5 * u[:, 0]) * rng.standard_t(3, 300)
    rows = [[repr(float(a)), repr(float(b)), repr(float(c))] for a, b, c in zip(u[:, 0], y, u[:, 1])]
    path = _write_csv(tmp_path / "d.csv", ["u1", "y", "u2"], rows)
    return path, Dataset.with_intercept(u, y)


def _fit_json(capsys, argv):
    assert main(argv) == 0
    return json.loads(capsys.readouterr().out)


def test_toy_ls_matches_library(tmp_path, capsys):
    path = _write_csv(tmp_path / "toy.csv", ["y", "x"], [[1, 0], [2, 1], [0.5, 2]])
    doc = _fit_json(capsys, ["fit", path, "-y", "y", "--alpha", "0.5", "--method", "ls"])
    data = Dataset.with_intercept([[0.0], [1.0], [2.0]], [1.0, 2.0, 0.5])
    beta = smoothed_qr_fit(data, 0.5).beta
    assert doc["beta"] == beta.tolist()
    assert doc["theta"] == es_ls_fit(data, beta, 0.5).theta.tolist()
    assert doc["columns"] == ["(intercept)", "x"]
    keys = {"alpha", "method", "beta", "theta", "tau", "se", "ci_lower", "ci_upper", "gamma", "crossings", "diagnostics"}
    assert keys <= set(doc)


def test_huber_matches_library(data_csv, capsys):
    path, data = data_csv
    doc = _fit_json(capsys, ["fit", path, "-y", "y", "--alpha", "0.2", "--method", "huber"])
    beta = smoothed_qr_fit(data, 0.2, control=SolverControl()).beta
    fit, _ = adaptive_huber_es(data, beta, 0.2, SolverControl())
    assert np.allclose(doc["theta"], fit.theta, atol=1e-12, rtol=0)
    assert doc["tau"] == pytest.approx(fit.tau, rel=1e-12)
    assert doc["gamma"] > 0 and doc["columns"] == ["(intercept)", "u1", "u2"]


def test_response_by_index_and_nc_methods(data_csv, capsys):
    path, _ = data_csv
    by_name = _fit_json(capsys, ["fit", path, "-y", "y", "--alpha", "0.1", "--method", "nc-ls"])
    by_index = _fit_json(capsys, ["fit", path, "-y", "1", "--alpha", "0.1", "--method", "nc-ls"])
    assert by_name == by_index and by_name["crossings"] == 0
    nc = _fit_json(capsys, ["fit", path, "-y", "y", "--alpha", "0.1", "--method", "nc-huber"])
    assert nc["crossings"] == 0


def test_fit_output_file_and_determinism(data_csv, tmp_path):
    path, _ = data_csv
    outs = []
    for k in range(2):
        out = tmp_path / f"o{k}.json"
        assert main(["fit", path, "-y", "y", "--alpha", "0.1", "-o", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


@pytest.mark.parametrize(
    "rows",
    [
        [["1", "abc"], ["2", "3"]],
        [["1", "2", "3"]],
        [],
        [["1", "nan"], ["2", "3"]],
    ],
)
def test_malformed_csv(tmp_path, rows, capsys):
    path = _write_csv(tmp_path / "bad.csv", ["y", "x"], rows)
    out = tmp_path / "out.json"
    assert main(["fit", path, "-y", "y", "--alpha", "0.1", "-o", str(out)]) == 2
    assert not out.exists()
    assert "error" in capsys.readouterr().err
    assert not [f for f in os.listdir(tmp_path) if f.startswith(".esreg-")]


def test_input_errors(data_csv, tmp_path):
    path, _ = data_csv
    assert main(["fit", str(tmp_path / "missing.csv"), "-y", "y", "--alpha", "0.1"]) == 2
    assert main(["fit", path, "-y", "nope", "--alpha", "0.1"]) == 2
    assert main(["fit", path, "-y", "y", "--alpha", "1.5"]) == 2
    assert main(["fit", path, "-y", "y", "--alpha", "0.1", "--gamma", "-1"]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["fit", path, "--alpha", "0.1"])
    assert exc.value.code == 2


def test_solver_failure_names_stage(tmp_path, capsys):
    path = _write_csv(tmp_path / "deg.csv", ["y", "x"], [[1, 1], [2, 1], [3, 1], [5, 1]])
    out = tmp_path / "o.json"
    assert main(["fit", path, "-y", "y", "--alpha", "0.5", "-o", str(out)]) == 3
    assert "quantile regression" in capsys.readouterr().err
    assert not out.exists()


def _smoke_config(tmp_path, fmt="toml"):
    if fmt == "toml":
        text = 'model = "hetero"\ndist = "t2.5"\np = 3\nalpha = 0.2\nn = 200\nreps = 2\nmethods = ["ls", "huber", "oracle", "nc-ls"]\nseed = 5\n'
        path = tmp_path / "c.toml"
    else:
        text = json.dumps({"model": "hetero", "dist": "normal", "p": 3, "alpha": 0.2, "n": "auto", "reps": 2,
                           "methods": ["ls", "nc_huber"], "seed": 5})
        path = tmp_path / "c.json"
    path.write_text(text)
    return str(path)


def test_simulate_smoke_and_schema(tmp_path):
    out = tmp_path / "run"
    assert main(["simulate", "--config", _smoke_config(tmp_path), "--outdir", str(out), "--quiet", "--threads", "1"]) == 0
    rows = list(csv.DictReader(io.StringIO((out / "summary.csv").read_text())))
    expected = {("ls", 5), ("huber", 5), ("oracle", 3), ("nc_ls", 3)}
    counts = {}
    for r in rows:
        counts[r["method"]] = counts.get(r["method"], 0) + 1
    assert {(m, c) for m, c in counts.items()} == expected
    assert len({(r["method"], r["metric"]) for r in rows}) == len(rows)
    assert main(["simulate", "--config", _smoke_config(tmp_path, "json"), "--outdir", str(out), "--quiet"]) == 0
    doc = json.loads((out / "report.json").read_text())
    assert doc["runs"][0]["config"]["n"] == 750


def test_simulate_byte_identical(tmp_path):
    cfg = _smoke_config(tmp_path)
    blobs = []
    for k, threads in enumerate(("1", "2")):
        out = tmp_path / f"r{k}"
        assert main(["simulate", "--config", cfg, "--outdir", str(out), "--quiet", "--threads", threads]) == 0
        blobs.append(((out / "report.json").read_bytes(), (out / "summary.csv").read_bytes()))
    assert blobs[0] == blobs[1]


def test_report_round_trip(tmp_path):
    out = tmp_path / "run"
    assert main(["simulate", "--config", _smoke_config(tmp_path), "--outdir", str(out), "--quiet"]) == 0
    doc = json.loads((out / "report.json").read_text())
    reports = []
    for run in doc["runs"]:
        c = run["config"]
        cfg = SimConfig(model=c["model"], dist=Dist.parse(c["dist"]), p=c["p"], alpha=c["alpha"], n=c["n"],
                        reps=c["reps"], methods=tuple(c["methods"]), seed=c["seed"])
        reports.append(SimulationReport(cfg, run["records"], aggregate(run["records"], cfg.methods)))
    assert summary_csv(reports) == (out / "summary.csv").read_text()


def test_simulate_config_errors(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text('model = "hetero"\nbogus = 1\n')
    assert main(["simulate", "--config", str(bad), "--outdir", str(tmp_path)]) == 2
    bad.write_text('model = "nope"\n')
    assert main(["simulate", "--config", str(bad), "--outdir", str(tmp_path)]) == 2
    bad.write_text("not toml [")
    assert main(["simulate", "--config", str(bad), "--outdir", str(tmp_path)]) == 2
    assert main(["simulate", "--dist", "t1.5", "--reps", "1", "--outdir", str(tmp_path)]) == 2


def test_simulate_flags_override(tmp_path, capsys):
    out = tmp_path / "f"
    argv = ["simulate", "--model", "qar", "--dist", "normal", "--alpha", "0.1", "--n", "200", "--reps", "2",
            "--methods", "ls,huber", "--outdir", str(out)]
    assert main(argv) == 0
    assert capsys.readouterr().out.startswith("alpha,method,label,metric,mean,se,failures")
    doc = json.loads((out / "report.json").read_text())
    assert doc["runs"][0]["config"]["qar"] == [0.5, 0.5, 0.95, 0.5]
    assert all("violations" in r for r in doc["runs"][0]["records"])


def test_replicate_smoke_never_band_fails(capsys):
    assert main(["replicate", "noncross-fig", "--reps", "10", "--threads", "1"]) == 0
    text = capsys.readouterr().out
    assert "advisory" in text and "checks passed" in text


def test_replicate_rejects_bad_flags():
    assert main(["replicate", "t-relerr", "--reps", "0"]) == 2
    assert main(["replicate", "t-relerr", "--scale", "0"]) == 2


def test_threads_env(tmp_path, monkeypatch):
    monkeypatch.setenv("ESREG_THREADS", "zero")
    assert main(["simulate", "--config", _smoke_config(tmp_path), "--outdir", str(tmp_path), "--quiet"]) == 2
    monkeypatch.setenv("ESREG_THREADS", "2")
    assert main(["simulate", "--config", _smoke_config(tmp_path), "--outdir", str(tmp_path), "--quiet"]) == 0


def test_console_entry_point(data_csv):
    path, _ = data_csv
    proc = subprocess.run([sys.executable, "-m", "esreg.cli", "fit", path, "-y", "y", "--alpha", "0.1"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and json.loads(proc.stdout)["method"] == "huber"
    proc = subprocess.run([sys.executable, "-m", "esreg.cli", "fit", path, "-y", "y", "--alpha", "2"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
