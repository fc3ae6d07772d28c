import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from omp_recover import ExperimentConfig, verify_conditions
from omp_recover import cli
from omp_recover.theory import GaussianRegimeParams, SubGaussianRegimeParams, plan

SUB_FLAGS = ["--regime", "subgaussian", "--p", "256", "--kbar", "8", "--a", "1", "--sigma", "1",
             "--lmin", "0.25", "--lmax", "2.25", "--lambda", "2.25"]


def run_cli(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def write_config(path, experiment, sweep=None, output=None, version=1):
    doc = {"spec_version": version, "experiment": experiment}
    if sweep is not None:
        doc["sweep"] = sweep
    doc["output"] = output or {"dir": "out"}
    path.write_text(json.dumps(doc, indent=2))
    return path


MINIMAL = {
    "regime": "subgaussian", "p": 32, "k": 2, "kbar": 2, "a": 1.0, "sigma": 0.5, "trials": 1,
    "n_rule": "explicit", "n": 60, "beta_min": 1.0,
    "lambda_min": 0.25, "lambda_max": 2.25, "lambda": 2.25,
}


# ----------------------------------------------------------------------
# plan


def test_plan_subgaussian_table(capsys):
    code, out, _ = run_cli(capsys, "plan", *SUB_FLAGS)
    assert code == 0
    r1_line = next(line for line in out.splitlines() if line.split()[:1] == ["r1"])
    assert float(r1_line.split()[1]) == max(2.25, 2.25) / 0.25**3
    for label in ("mu_n", "tau", "tau1", "rho", "r2", "xi", "n_sufficient", "xi_bar", "failure bound"):
        assert any(line.strip().startswith(label) for line in out.splitlines()), label


def test_plan_gaussian_rho_one(capsys):
    code, out, _ = run_cli(capsys, "plan", "--regime", "gaussian", "--omega0", "0", "--nu", "0", "--eta", "0",
                           "--p", "256", "--kbar", "8", "--a", "1", "--sigma", "1")
    assert code == 0
    rho_line = next(line for line in out.splitlines() if line.split()[:1] == ["rho"])
    assert float(rho_line.split()[1]) == 1.0


def test_plan_json_identical_to_library(capsys):
    code, out, _ = run_cli(capsys, "plan", *SUB_FLAGS, "--json")
    assert code == 0
    ref = plan(SubGaussianRegimeParams(256, 8, 1.0, 1.0, 0.25, 2.25, 2.25)).to_dict()
    assert json.loads(out)["theory"] == ref
    code, out, _ = run_cli(capsys, "plan", "--regime", "gaussian", "--p", "128", "--kbar", "4", "--a", "1",
                           "--sigma", "0.5", "--omega0", "0.3", "--nu", "1", "--eta", "4", "--json")
    ref = plan(GaussianRegimeParams(128, 4, 1.0, 0.5, 0.3, 1.0, 4.0)).to_dict()
    assert json.loads(out)["theory"] == ref


def test_plan_h_too_large_exits_2(capsys):
    code, _, err = run_cli(capsys, "plan", "--regime", "gaussian", "--p", "256", "--kbar", "8", "--a", "1",
                           "--sigma", "1", "--n", "10")
    assert code == 2
    assert "HNotLessThanOne" in err


def test_plan_missing_flag_exits_2(capsys):
    code, _, err = run_cli(capsys, "plan", "--regime", "subgaussian", "--p", "64")
    assert code == 2 and "--kbar" in err


def test_plan_from_config(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", MINIMAL)
    code, out, _ = run_cli(capsys, "plan", "--config", str(cfg), "--json")
    assert code == 0
    assert json.loads(out)["theory"]["n"] == 60


def test_usage_error_exits_2():
    proc = subprocess.run([sys.executable, "-m", "omp_recover", "plan", "--p", "notanint"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    proc = subprocess.run([sys.executable, "-m", "omp_recover"], capture_output=True, text=True)
    assert proc.returncode == 2


# ----------------------------------------------------------------------
# run


def test_run_minimal_produces_all_files(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", MINIMAL)
    code, _, _ = run_cli(capsys, "run", str(cfg))
    assert code == 0
    out = tmp_path / "out"
    assert {p.name for p in out.iterdir()} == {"report.json", "trials.csv", "plot.csv"}
    with open(out / "plot.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["sweep_value", "metric", "rate", "bound"]
    assert len(rows) == 1 + len(cli.PLOT_METRICS)


def test_run_is_deterministic(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", {**MINIMAL, "trials": 25}, sweep={"n": [40, 80]})
    assert run_cli(capsys, "run", str(cfg), "--out", str(tmp_path / "a"))[0] == 0
    assert run_cli(capsys, "run", str(cfg), "--out", str(tmp_path / "b"), "--workers", "2")[0] == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == ["plot.csv", "report.json", "trials_000.csv", "trials_001.csv"]
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_run_report_config_round_trips(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", {**MINIMAL, "trials": 5})
    run_cli(capsys, "run", str(cfg))
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    echoed = report["points"][0]["config"]
    again = write_config(tmp_path / "again.json", echoed, output={"dir": "out2"})
    assert run_cli(capsys, "run", str(again))[0] == 0
    assert (tmp_path / "out" / "trials.csv").read_bytes() == (tmp_path / "out2" / "trials.csv").read_bytes()
    assert ExperimentConfig.from_dict(echoed).to_dict() == echoed


def test_run_sweep_rate_increases_with_n(tmp_path, capsys):
    exp = {**MINIMAL, "p": 64, "k": 4, "kbar": 4, "trials": 200, "master_seed": 11, "beta_min": 0.5}
    ns = [40, 55, 70, 85, 100]
    cfg = write_config(tmp_path / "c.json", exp, sweep={"n": ns})
    assert run_cli(capsys, "run", str(cfg))[0] == 0
    with open(tmp_path / "out" / "plot.csv") as fh:
        rows = [r for r in csv.DictReader(fh) if r["metric"] == "exact_ok"]
    assert [int(r["sweep_value"]) for r in rows] == ns
    rates = [float(r["rate"]) for r in rows]
    inversions = sum(b < a for a, b in zip(rates, rates[1:]))
    assert inversions <= 1
    assert rates[-1] > rates[0]


def test_run_traces_and_explicit_sigma(tmp_path, capsys):
    p = 6
    sigma = np.full((p, p), 0.1)
    np.fill_diagonal(sigma, 1.0)
    np.savetxt(tmp_path / "sigma.csv", sigma, delimiter=",")
    exp = {
        "regime": "gaussian", "p": p, "k": 1, "kbar": 1, "a": 1.0, "sigma": 0.1, "trials": 3,
        "n_rule": "explicit", "n": 400, "ensemble": "correlated_gaussian", "omega0": 0.2,
        "sigma_matrix": {"kind": "explicit", "path": "sigma.csv"}, "beta_min": 2.0, "record_traces": True,
    }
    cfg = write_config(tmp_path / "c.json", exp)
    assert run_cli(capsys, "run", str(cfg))[0] == 0
    lines = (tmp_path / "out" / "traces.jsonl").read_text().splitlines()
    assert len(lines) == 3
    assert set(json.loads(lines[0])) >= {"trial_index", "detected", "stop_reason"}
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["points"][0]["config"]["sigma_matrix"]["kind"] == "explicit"


@pytest.mark.parametrize(
    "mutate, needle",
    [
        (lambda d: d["experiment"].update(trails=3), "trails"),
        (lambda d: d.update(spec_version=2), "spec_version"),
        (lambda d: d.update(extra=1), "extra"),
        (lambda d: d.update(sweep={"a": [1, 2]}), "sweep key 'a'"),
        (lambda d: d["experiment"].update(regime="weird"), "regime"),
        (lambda d: d["output"].update(colour="red"), "colour"),
    ],
)
def test_run_config_errors_exit_2(tmp_path, capsys, mutate, needle):
    doc = {"spec_version": 1, "experiment": dict(MINIMAL), "output": {"dir": "out"}}
    mutate(doc)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(doc, indent=2))
    code, _, err = run_cli(capsys, "run", str(path))
    assert code == 2
    assert needle in err
    assert not (tmp_path / "out").exists()


def test_run_reports_line_numbers(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text('{\n  "spec_version": 1,\n  "experiment": {\n    "p": 32,,\n  }\n}\n')
    code, _, err = run_cli(capsys, "run", str(path))
    assert code == 2 and "line 4" in err
    doc = json.dumps({"spec_version": 1, "experiment": {**MINIMAL, "bogus_key": 1}}, indent=2)
    path.write_text(doc)
    code, _, err = run_cli(capsys, "run", str(path))
    line = doc.splitlines().index('    "bogus_key": 1') + 1
    assert code == 2 and f"line {line}" in err and "bogus_key" in err


def test_run_parameter_error_exits_2(tmp_path, capsys):
    exp = {**MINIMAL, "regime": "gaussian", "n": 5, "omega0": 0.1}
    for key in ("lambda_min", "lambda_max", "lambda"):
        exp.pop(key)
    code, _, err = run_cli(capsys, "run", str(write_config(tmp_path / "c.json", exp)))
    assert code == 2 and "HNotLessThanOne" in err


def test_run_runtime_failure_exits_1(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("")
    cfg = write_config(tmp_path / "c.json", MINIMAL)
    code, _, err = run_cli(capsys, "run", str(cfg), "--out", str(blocker / "sub"))
    assert code == 1 and "error" in err


def test_workers_env_overrides_flag(monkeypatch):
    monkeypatch.setenv("OMP_RECOVER_WORKERS", "3")
    assert cli._resolve_workers(7) == 3
    monkeypatch.delenv("OMP_RECOVER_WORKERS")
    assert cli._resolve_workers(7) == 7


# ----------------------------------------------------------------------
# check


def test_check_identity_gram(tmp_path, capsys):
    n = 4
    np.savetxt(tmp_path / "x.csv", math.sqrt(n) * np.eye(n), delimiter=",")
    code, out, _ = run_cli(capsys, "check", str(tmp_path / "x.csv"), "--support", "0,1,2,3", "--json")
    rep = json.loads(out)
    assert code == 0
    assert rep["lambda_min_hat"] == pytest.approx(1.0) and rep["lambda_max_hat"] == pytest.approx(1.0)


def test_check_duplicated_column(tmp_path, capsys):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((20, 4))
    x[:, 2] = x[:, 0]
    np.savetxt(tmp_path / "x.csv", x, delimiter=",")
    code, out, _ = run_cli(capsys, "check", str(tmp_path / "x.csv"), "--support", "0,2",
                           "--lmin", "0.25", "--lmax", "2.25", "--json")
    rep = json.loads(out)
    assert code == 0
    assert abs(rep["lambda_min_hat"]) < 1e-12
    assert rep["condition1_ok"] is False


def test_check_matches_library(tmp_path, capsys):
    rng = np.random.default_rng(3)
    x = rng.standard_normal((30, 12))
    e = rng.standard_normal(30)
    np.savetxt(tmp_path / "x.csv", x, delimiter=",", fmt="%.17g")
    np.savetxt(tmp_path / "e.csv", e, delimiter=",", fmt="%.17g")
    code, out, _ = run_cli(capsys, "check", str(tmp_path / "x.csv"), "--support", "1,5,7", "--noise",
                           str(tmp_path / "e.csv"), "--sigma", "0.9", "--lmin", "0.3", "--lmax", "2",
                           "--lambda", "1.5", "--json")
    assert code == 0
    ref = verify_conditions(x, [1, 5, 7], e, 0.9, 0.3, 2.0, 1.5).to_dict()
    assert json.loads(out) == ref
    code, out, _ = run_cli(capsys, "check", str(tmp_path / "x.csv"), "--support", "1,5,7")
    assert code == 0 and "coherence_x" in out


def test_check_malformed_matrix_exits_2(tmp_path, capsys):
    (tmp_path / "bad.csv").write_text("1,2,3\n4,5\n")
    assert run_cli(capsys, "check", str(tmp_path / "bad.csv"), "--support", "0")[0] == 2
    (tmp_path / "bad.csv").write_text("1,x\n4,5\n")
    assert run_cli(capsys, "check", str(tmp_path / "bad.csv"), "--support", "0")[0] == 2
    (tmp_path / "ok.csv").write_text("1,0\n0,1\n")
    assert run_cli(capsys, "check", str(tmp_path / "ok.csv"), "--support", "5")[0] == 2
    assert run_cli(capsys, "check", str(tmp_path / "missing.csv"))[0] == 2


# ----------------------------------------------------------------------
# tails


def test_tails_json(capsys):
    code, out, _ = run_cli(capsys, "tails", "--trials", "5000", "--n", "1", "--p", "2", "--json")
    rep = json.loads(out)
    assert code == 0
    assert rep["chi_bound"] == 0.5 and rep["chi_ok"] is True


def test_tails_text(capsys):
    code, out, _ = run_cli(capsys, "tails", "--trials", "2000", "--p", "100")
    assert code == 0 and "ok=True" in out
