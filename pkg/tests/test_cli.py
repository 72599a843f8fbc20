import csv
import json
import math
import subprocess
import sys
import time
from pathlib import Path

import pytest

from snkb import bounds, cli
from snkb.config import canonical, load_config
from snkb.logistic import FitError
from snkb.parallel import default_threads
from snkb.rng import stream_seed
from snkb.validation import evaluate_trace, simulate_trace

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
GOLDEN = Path(__file__).parent / "golden"


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return path


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# --------------------------------------------------------------------- bounds


def test_bounds_single_row(tmp_path):
    cfg = write_json(tmp_path / "b.json", {"b": 1.0, "grid": {"n": [10], "rho": [1.0], "y": [1.0], "gamma": [0.0]}})
    assert cli.main(["bounds", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    rows = read_rows(tmp_path / "o" / "bounds.csv")
    assert rows[0] == ["n", "rho", "y", "gamma", "beta", "hoeffding", "omega", "budget"]
    assert len(rows) == 2
    beta = float(rows[1][4])
    assert beta == bounds.beta_fixed(1.0, 1.0, 0.0)
    assert beta == pytest.approx(6.77962, abs=1e-5)
    assert float(rows[1][6]) == bounds.omega(1.0, 1.0, 0.0, 1.0)
    assert float(rows[1][7]) == 2 * math.exp(-1.0)


def test_bounds_empty_grid_is_header_only(tmp_path):
    cfg = write_json(tmp_path / "b.json", {"grid": {}})
    assert cli.main(["bounds", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "bounds.csv").read_text() == "n,rho,y,gamma,beta,hoeffding,omega,budget\n"


def test_bounds_rerun_byte_identical(tmp_path):
    for d in ("a", "b"):
        assert cli.main(["bounds", "--config", str(CONFIGS / "bounds_demo.json"), "--out", str(tmp_path / d)]) == 0
    assert (tmp_path / "a" / "bounds.csv").read_bytes() == (tmp_path / "b" / "bounds.csv").read_bytes()
    assert len(read_rows(tmp_path / "a" / "bounds.csv")) == 1 + 2 * 2 * 2 * 3


# ------------------------------------------------------------------- coverage


def test_coverage_smoke_run(tmp_path):
    t0 = time.perf_counter()
    code = cli.main(["coverage", "--config", str(CONFIGS / "coverage_smoke.json"), "--out", str(tmp_path),
                     "--threads", "1"])
    elapsed = time.perf_counter() - t0
    assert code == 0
    assert elapsed < 10.0
    summary = {r[0]: r for r in read_rows(tmp_path / "summary.csv")[1:]}
    assert float(summary["bernstein-fixed"][1]) == 2 * math.exp(-3.0)
    assert float(summary["hoeffding-fixed"][1]) == math.exp(-3.0)
    assert float(summary["bernstein-stitched"][1]) == math.pi**2 / 6 * math.exp(-3.0)

    cfg = load_config("coverage", CONFIGS / "coverage_smoke.json")
    rows = read_rows(tmp_path / "replications.csv")
    assert len(rows) == 1 + 3 * cfg.replications
    tc = cfg.trace_config()
    for row in rows[1:][::37]:
        i, th = int(row[0]), row[1]
        tr = simulate_trace(tc.d, tc.N, tc.covariate_rule, tc.noise, stream_seed(cfg.seed, i))
        out = evaluate_trace(tr, th, cfg.y, cfg.rho)
        assert row[2] == ("1" if out.violated else "0")
        assert float(row[4]) == out.max_ratio


def test_coverage_over_budget_exit_code(tmp_path, monkeypatch):
    from snkb.validation import CoverageResult, TraceOutcome

    def fake(reps, cfg, y, theorems, rho, seed, threads):
        outs = [TraceOutcome(True, 1, 2.0)] * reps
        return {th: CoverageResult(th, y, rho, 0.01, outs) for th in theorems}

    monkeypatch.setattr(cli, "coverage_experiment", fake)
    code = cli.main(["coverage", "--config", str(CONFIGS / "coverage_smoke.json"), "--out", str(tmp_path)])
    assert code == 3


# --------------------------------------------------------------------- bandit


def test_bandit_single_arm_zero_regret(tmp_path):
    cfg = write_json(tmp_path / "c.json", {
        "kernel": {"family": "linear", "input_dim": 2}, "arms": [[0.6, 0.8]],
        "f_star": {"vector": [0.5, 0.5]}, "horizon": 40, "seeds": 2,
    })
    assert cli.main(["bandit", "--config", str(cfg), "--out", str(tmp_path / "o"), "--threads", "1"]) == 0
    for f in (tmp_path / "o" / "traces").glob("*.csv"):
        assert all(float(r[4]) == 0.0 for r in read_rows(f)[1:])
    assert all(float(r[1]) == 0.0 for r in read_rows(tmp_path / "o" / "aggregate.csv")[1:])


def test_bandit_aggregate_is_mean_of_seed_files(tmp_path):
    assert cli.main(["bandit", "--config", str(CONFIGS / "bandit_golden.json"), "--out", str(tmp_path),
                     "--threads", "1"]) == 0
    files = sorted((tmp_path / "traces").glob("seed_*.csv"))
    assert len(files) == 4
    per_seed = [[float(r[4]) for r in read_rows(f)[1:]] for f in files]
    agg = read_rows(tmp_path / "aggregate.csv")
    assert agg[0] == ["round", "mean_cum_regret", "bound_curve"]
    for j, row in enumerate(agg[1:]):
        assert float(row[1]) == math.fsum(s[j] for s in per_seed) / len(per_seed)
    assert "modulo a universal constant" in (tmp_path / "summary.txt").read_text()
    assert read_rows(files[0])[0] == ["round", "arm", "reward", "regret", "cum_regret", "radius"]


def test_bandit_golden(tmp_path):
    assert cli.main(["bandit", "--config", str(CONFIGS / "bandit_golden.json"), "--out", str(tmp_path),
                     "--threads", "2"]) == 0
    assert (tmp_path / "aggregate.csv").read_bytes() == (GOLDEN / "bandit_golden_aggregate.csv").read_bytes()


def test_seed_override_changes_output(tmp_path):
    base = ["bandit", "--config", str(CONFIGS / "bandit_golden.json"), "--threads", "1"]
    assert cli.main(base + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(base + ["--out", str(tmp_path / "b"), "--seed", "12"]) == 0
    assert (tmp_path / "a" / "aggregate.csv").read_bytes() != (tmp_path / "b" / "aggregate.csv").read_bytes()


# ----------------------------------------------------------------- regression


def _regression_cfg(tmp_path, rows, **extra):
    data = tmp_path / "data.csv"
    data.write_text(rows)
    cfg = {"kernel": {"family": "gaussian-rbf", "input_dim": 1, "lengthscale": 0.5}, "dataset": "data.csv",
           "rho": 2.0, "y": 3.0, "b": 1.0, "test_points": [[0.0], [1.0], [5.0]]}
    cfg.update(extra)
    return write_json(tmp_path / "r.json", cfg)


def test_regression_empty_dataset(tmp_path):
    cfg = _regression_cfg(tmp_path, "x0,response\n")
    assert cli.main(["regression", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    rows = read_rows(tmp_path / "o" / "bands.csv")
    assert rows[0] == ["x0", "mean", "sigma", "lower", "upper"]
    for r in rows[1:]:
        assert float(r[1]) == 0.0 and float(r[2]) == 1.0


def test_regression_band_symmetry(tmp_path):
    cfg = _regression_cfg(tmp_path, "x0,response\n0.1,1\n0.4,0\n# comment\n0.9,0.3\n")
    assert cli.main(["regression", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    from snkb.kernels import KernelSpec, gram_from_points, info_gain

    gamma = info_gain(gram_from_points(KernelSpec.rbf(1, 0.5), [[0.1], [0.4], [0.9]]), 2.0)
    width = bounds.omega(2.0, 3.0, gamma, 1.0)
    rows = [[float(v) for v in r] for r in read_rows(tmp_path / "o" / "bands.csv")[1:]]
    for _, m, s, lo, up in rows:
        assert up - lo == pytest.approx(2 * width * s / math.sqrt(2.0), rel=1e-12)
        assert m - lo == pytest.approx(up - m, rel=1e-12)


@pytest.mark.parametrize("body,line", [("x0,response\n0.1,1\n0.2,abc\n", 3), ("x0,response\n0.1,1\n0.2\n", 3),
                                       ("0.1,1\n0.2,1.5\n", 2), ("0.1,1\n\n0.3,nan\n", 3)])
def test_regression_malformed_rows(tmp_path, capsys, body, line):
    cfg = _regression_cfg(tmp_path, body)
    assert cli.main(["regression", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    msg = json.loads(err[0])
    assert msg["code"] == 1 and f"line {line}:" in msg["message"]


def test_regression_golden(tmp_path):
    assert cli.main(["regression", "--config", str(CONFIGS / "regression_demo.json"), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "bands.csv").read_bytes() == (GOLDEN / "regression_demo_bands.csv").read_bytes()


def test_numerical_failure_exit_code(tmp_path, monkeypatch, capsys):
    def boom(*a, **k):
        raise FitError("Newton did not converge", 1.0)

    monkeypatch.setattr(cli, "fit", boom)
    assert cli.main(["regression", "--config", str(CONFIGS / "regression_demo.json"), "--out", str(tmp_path)]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "numerical"


# --------------------------------------------------------------------- config


@pytest.mark.parametrize("name,command", [("bounds_demo.json", "bounds"), ("coverage_smoke.json", "coverage"),
                                          ("bandit_demo.json", "bandit"), ("regression_demo.json", "regression")])
def test_config_round_trip(tmp_path, capsys, name, command):
    assert cli.main([command, "--config", str(CONFIGS / name), "--dump-config"]) == 0
    first = capsys.readouterr().out.strip()
    again = write_json(tmp_path / "c.json", json.loads(first))
    assert canonical(load_config(command, again)) == first


@pytest.mark.parametrize("patch", [{"bogus": 1}, {"replications": 50}, {"y": -1}, {"noise": {"kind": "cauchy"}},
                                   {"theorems": ["nonexistent"]}, {"noise": {"sigma": 2.0}}])
def test_rejected_config_subprocess(tmp_path, patch):
    cfg = json.loads((CONFIGS / "coverage_smoke.json").read_text())
    cfg.update(patch)
    path = write_json(tmp_path / "bad.json", cfg)
    proc = subprocess.run([sys.executable, "-m", "snkb", "coverage", "--config", str(path), "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 1
    lines = proc.stderr.strip().splitlines()
    assert len(lines) == 1
    assert json.loads(lines[0])["error"] == "config"
    assert not (tmp_path / "summary.csv").exists()


def test_bandit_norm_over_bound_rejected(tmp_path):
    cfg = json.loads((CONFIGS / "bandit_golden.json").read_text())
    cfg["b"] = 1.0
    assert cli.main(["bandit", "--config", str(write_json(tmp_path / "c.json", cfg)), "--out", str(tmp_path)]) == 1


def test_missing_config_file(tmp_path):
    assert cli.main(["bounds", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 1


def test_threads_env(monkeypatch):
    monkeypatch.setenv("SNKB_THREADS", "3")
    assert default_threads() == 3
    monkeypatch.setenv("SNKB_THREADS", "0")
    with pytest.raises(ValueError):
        default_threads()


def test_bad_threads_flag(tmp_path):
    assert cli.main(["bounds", "--config", str(CONFIGS / "bounds_demo.json"), "--out", str(tmp_path),
                     "--threads", "0"]) == 1
