"""Batch experiment driver.

    snkb bounds     --config grid.json     --out DIR
    snkb coverage   --config coverage.json --out DIR [--seed S] [--threads T]
    snkb bandit     --config bandit.json   --out DIR [--seed S] [--threads T]
    snkb regression --config bands.json    --out DIR

Exit codes: 0 success, 1 config or data error, 2 numerical failure,
3 a coverage run exceeded its failure budget.  Errors are reported on stderr
as a single JSON line.
"""

from __future__ import annotations

import argparse
import csv
import functools
import itertools
import json
import math
import sys
import time
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import bounds
from .bandit import run_bandit
from .config import SCHEMAS, canonical, load_config
from .kernels import gram_from_points, info_gain
from .logistic import FitError, fit, predict_mean_batch, predictive_variance_batch
from .parallel import default_threads, pmap
from .rng import stream_seed
from .validation import coverage_experiment

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_ASSERT = 0, 1, 2, 3
CAVEAT = "bound_curve is the regret bound modulo a universal constant (constant taken as 1)"


class DataError(ValueError):
    pass


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def cmd_bounds(cfg, out: Path):
    g = cfg.grid
    rows = []
    for n, rho, y, gamma in itertools.product(g.n, g.rho, g.y, g.gamma):
        rows.append((
            n, rho, y, gamma,
            bounds.beta_fixed(rho, y, gamma),
            bounds.hoeffding_radius(rho, y, gamma),
            bounds.omega(rho, y, gamma, cfg.b),
            bounds.budget_bernstein(y),
        ))
    path = out / "bounds.csv"
    write_csv(path, ["n", "rho", "y", "gamma", "beta", "hoeffding", "omega", "budget"], rows)
    print(f"wrote {len(rows)} rows to {path} (budget column = 2 exp(-y), the beta/omega failure budget;"
          f" the hoeffding radius carries exp(-y))")
    return EXIT_OK


def cmd_coverage(cfg, out: Path, threads=None):
    t0 = time.perf_counter()
    results = coverage_experiment(
        cfg.replications, cfg.trace_config(), cfg.y, cfg.theorems, cfg.rho, cfg.seed, threads
    )
    runtime = time.perf_counter() - t0
    rep_rows = []
    for th, res in results.items():
        for i, o in enumerate(res.outcomes):
            rep_rows.append((i, th, o.violated, o.first_violation, o.max_ratio))
    write_csv(out / "replications.csv",
              ["replication", "theorem", "violated", "first_violation", "max_ratio"], rep_rows)
    summary = []
    ok = True
    for th, res in results.items():
        lo, hi = res.wilson
        within = res.within_budget()
        ok &= within
        summary.append((th, res.budget, res.reps, res.violations, res.rate, lo, hi, within))
    write_csv(out / "summary.csv",
              ["theorem", "budget", "replications", "violations", "violation_rate", "wilson_low",
               "wilson_high", "within_budget"], summary)
    for th, budget, m, k, rate, lo, hi, within in summary:
        print(f"{th}: violation rate {rate:.4f} [{lo:.4f}, {hi:.4f}] over {m} replications, "
              f"budget {budget:.4f} -> {'PASS' if within else 'FAIL'}")
    print(f"runtime {runtime:.2f} s")
    return EXIT_OK if ok else EXIT_ASSERT


def _bandit_seed(index, bcfg, master):
    return run_bandit(bcfg, stream_seed(master, index))


def cmd_bandit(cfg, out: Path, threads=None):
    bcfg = cfg.build()
    t0 = time.perf_counter()
    traces = pmap(functools.partial(_bandit_seed, bcfg=bcfg, master=cfg.seed), range(cfg.seeds), threads,
                  chunksize=1)
    runtime = time.perf_counter() - t0
    width = len(str(cfg.seeds - 1))
    for i, tr in enumerate(traces):
        write_csv(out / "traces" / f"seed_{i:0{width}d}.csv",
                  ["round", "arm", "reward", "regret", "cum_regret", "radius"], tr.rows())
    agg = []
    for j in range(bcfg.horizon):
        mean_cum = math.fsum(float(tr.cum_regret[j]) for tr in traces) / len(traces)
        curves = [
            bounds.regret_bound_curve(
                j + 1, tr.v_star, tr.kappa_star,
                bounds.omega(bcfg.rho, bcfg.y, float(tr.gamma_post[j]), bcfg.b), float(tr.gamma_post[j]),
            )
            for tr in traces
        ]
        agg.append((j + 1, mean_cum, math.fsum(curves) / len(curves)))
    write_csv(out / "aggregate.csv", ["round", "mean_cum_regret", "bound_curve"], agg)
    tr0 = traces[0]
    lines = [
        f"seeds: {cfg.seeds}",
        f"horizon: {bcfg.horizon}",
        f"best_arm: {tr0.best_arm}",
        f"v_star: {tr0.v_star!r}",
        f"kappa_star: {tr0.kappa_star!r}",
        f"mean_final_regret: {agg[-1][1]!r}",
        f"confidence budget per seed: 2*exp(-y) = {bounds.budget_bernstein(bcfg.y)!r}",
        CAVEAT,
    ]
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    print(f"runtime {runtime:.2f} s")
    return EXIT_OK


def read_dataset(path: Path, d: int):
    """Rows of ``d`` inputs followed by a response in [0, 1]; '#' lines and an
    optional header row are skipped."""
    X, Y = [], []
    with open(path, newline="") as fh:
        first = True
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                continue
            try:
                vals = [float(v) for v in row]
            except ValueError:
                if first:
                    first = False
                    continue
                raise DataError(f"{path}: line {lineno}: non-numeric value") from None
            first = False
            if len(vals) != d + 1:
                raise DataError(f"{path}: line {lineno}: expected {d + 1} columns, got {len(vals)}")
            if not all(math.isfinite(v) for v in vals):
                raise DataError(f"{path}: line {lineno}: non-finite value")
            if not 0.0 <= vals[-1] <= 1.0:
                raise DataError(f"{path}: line {lineno}: response {vals[-1]} outside [0, 1]")
            X.append(vals[:-1])
            Y.append(vals[-1])
    return np.array(X, dtype=float).reshape(-1, d), np.array(Y, dtype=float)


def cmd_regression(cfg, out: Path, base_dir: Path = Path(".")):
    spec = cfg.kernel.build()
    path = Path(cfg.dataset)
    if not path.is_absolute():
        path = base_dir / path
    X, Y = read_dataset(path, spec.input_dim)
    gram = gram_from_points(spec, X)
    model = fit(gram, Y, cfg.rho)
    gamma = info_gain(gram, cfg.rho)
    width = bounds.omega(cfg.rho, cfg.y, gamma, cfg.b)
    A = cfg.test_matrix()
    mean = predict_mean_batch(model, A)
    sigma = np.sqrt(predictive_variance_batch(model, A))
    half = width * sigma / math.sqrt(cfg.rho)
    header = [f"x{i}" for i in range(spec.input_dim)] + ["mean", "sigma", "lower", "upper"]
    rows = (tuple(a) + (m, s, m - h, m + h) for a, m, s, h in zip(A, mean, sigma, half))
    write_csv(out / "bands.csv", header, rows)
    print(f"fitted {gram.n} observations; gamma={gamma:.6g}, omega={width:.6g};"
          f" band holds with probability >= 1 - 2 exp(-y) = {1 - bounds.budget_bernstein(cfg.y):.6g}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="snkb", description="Self-normalised confidence bounds toolkit")
    sub = p.add_subparsers(dest="command", required=True)
    for name in SCHEMAS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, type=Path)
        s.add_argument("--out", type=Path, default=Path("out"))
        s.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        s.add_argument("--threads", type=int, default=None, help="worker processes (default: $SNKB_THREADS or cores)")
        s.add_argument("--dump-config", action="store_true", help="print the canonical config and exit")
    return p


def _fail(kind, code, exc):
    print(json.dumps({"error": kind, "code": code, "message": str(exc)}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.command, args.config, args.seed)
        threads = args.threads if args.threads is not None else default_threads()
        if threads < 1:
            raise ValueError("--threads must be >= 1")
    except (ValidationError, ValueError, OSError) as e:
        return _fail("config", EXIT_CONFIG, e)
    if args.dump_config:
        print(canonical(cfg))
        return EXIT_OK
    out = args.out
    try:
        if args.command == "bounds":
            return cmd_bounds(cfg, out)
        if args.command == "coverage":
            return cmd_coverage(cfg, out, threads)
        if args.command == "bandit":
            return cmd_bandit(cfg, out, threads)
        return cmd_regression(cfg, out, args.config.parent)
    except (DataError, OSError) as e:
        return _fail("data", EXIT_CONFIG, e)
    except (FitError, np.linalg.LinAlgError, FloatingPointError, RuntimeError) as e:
        return _fail("numerical", EXIT_NUMERIC, e)


if __name__ == "__main__":
    sys.exit(main())
