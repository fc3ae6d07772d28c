"""Command-line front end: ``plan``, ``run``, ``check`` and ``tails``.

Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage or
configuration error.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import math
import os
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .designs import load_sigma_csv, verify_conditions
from .errors import ConfigError, DomainError, OmpRecoverError, SigmaNotPD
from .harness import ExperimentConfig, check_tail_bounds, default_workers, run_experiment
from .theory import GaussianRegimeParams, NRule, SubGaussianRegimeParams, plan

SPEC_VERSION = 1
SWEEP_KEYS = ("n", "p", "k", "sigma", "omega0", "eta", "beta_min", "beta_min_factor")
OUTPUT_KEYS = {"dir", "report", "trials_csv", "plot_csv", "traces"}
TOP_KEYS = {"spec_version", "experiment", "sweep", "output"}
PLOT_METRICS = ("subset_ok", "partial_ok", "exact_ok", "large_recovered", "theorem_event")

PLAN_ROWS = (
    ("mu_n", "mu_n"),
    ("tau", "tau"),
    ("tau1", "tau1"),
    ("rho", "rho"),
    ("lambda_min", "lambda_min"),
    ("lambda_max", "lambda_max"),
    ("lambda", "lam"),
    ("r1", "r1"),
    ("r2", "r2"),
    ("f(delta)", "f_delta"),
    ("alpha", "alpha"),
    ("xi", "xi"),
    ("n_sufficient", "n_sufficient"),
    ("xi_bar", "xi_bar"),
    ("n_corollary", "n_corollary"),
    ("r", "r_recovery"),
    ("n (evaluated at)", "n"),
    ("failure bound", "perr_bound"),
    ("failure bound (clamped)", "perr_bound_clamped"),
    ("oracle C", "oracle_c"),
)


class UsageError(Exception):
    pass


def _line_of(text, key):
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _where(text, key):
    line = _line_of(text, key)
    return f"line {line}: " if line else ""


def load_config(path):
    """Parse a run configuration file.

    Returns ``(base_config, sweep, output)``.  Unknown keys at any level are
    rejected with the offending key and its line.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    for key in doc:
        if key not in TOP_KEYS:
            raise ConfigError(f"{path}: {_where(text, key)}unknown key {key!r}")
    if doc.get("spec_version") != SPEC_VERSION:
        raise ConfigError(
            f"{path}: {_where(text, 'spec_version')}spec_version must be {SPEC_VERSION}, "
            f"got {doc.get('spec_version')!r}"
        )
    exp = doc.get("experiment")
    if not isinstance(exp, dict):
        raise ConfigError(f"{path}: missing 'experiment' object")
    exp = dict(exp)
    sm = exp.get("sigma_matrix")
    if isinstance(sm, dict) and sm.get("kind") == "explicit" and "path" in sm:
        extra = set(sm) - {"kind", "path"}
        if extra:
            raise ConfigError(f"{path}: {_where(text, 'sigma_matrix')}unknown sigma_matrix key(s) {sorted(extra)}")
        try:
            exp["sigma_matrix"] = load_sigma_csv(path.parent / sm["path"])
        except (OSError, OmpRecoverError, ValueError) as exc:
            raise ConfigError(f"{path}: {_where(text, 'sigma_matrix')}sigma_matrix.path: {exc}") from None
    try:
        base = ExperimentConfig.from_dict(exp)
    except ConfigError as exc:
        msg = str(exc)
        m = re.search(r"unknown experiment key\(s\): (\w+)", msg) or re.match(r"(\w+):", msg)
        where = _where(text, m.group(1)) if m else ""
        raise ConfigError(f"{path}: {where}{msg}") from None
    except (OmpRecoverError, ValueError) as exc:
        raise ConfigError(f"{path}: experiment: {exc}") from None

    sweep = doc.get("sweep") or {}
    if not isinstance(sweep, dict):
        raise ConfigError(f"{path}: 'sweep' must be an object")
    for key, values in sweep.items():
        if key not in SWEEP_KEYS:
            raise ConfigError(f"{path}: {_where(text, key)}sweep key {key!r} not in {', '.join(SWEEP_KEYS)}")
        if not isinstance(values, list) or not values:
            raise ConfigError(f"{path}: {_where(text, key)}sweep.{key} must be a non-empty list")

    output = doc.get("output") or {}
    if not isinstance(output, dict):
        raise ConfigError(f"{path}: 'output' must be an object")
    for key in output:
        if key not in OUTPUT_KEYS:
            raise ConfigError(f"{path}: {_where(text, key)}unknown output key {key!r}")
    out = {
        "dir": "out",
        "report": "report.json",
        "trials_csv": "trials.csv",
        "plot_csv": "plot.csv",
        "traces": "traces.jsonl",
    }
    out.update(output)
    if not Path(out["dir"]).is_absolute():
        out["dir"] = str(path.parent / out["dir"])
    return base, sweep, out


def sweep_points(base: ExperimentConfig, sweep):
    """Configs for the Cartesian product of the sweep lists, in key order."""
    if not sweep:
        return [({}, base)]
    keys = list(sweep)
    points = []
    for combo in itertools.product(*(sweep[k] for k in keys)):
        changes = dict(zip(keys, combo))
        if "n" in changes:
            changes["n_rule"] = NRule.EXPLICIT
        if "beta_min" in changes:
            changes["beta_min_factor"] = None
        if "beta_min_factor" in changes:
            changes["beta_min"] = None
        try:
            cfg = base.replace(**changes)
        except (OmpRecoverError, ValueError) as exc:
            raise ConfigError(f"sweep point {dict(zip(keys, combo))}: {exc}") from None
        points.append((dict(zip(keys, combo)), cfg))
    return points


def _sweep_label(values, n):
    if not values:
        return str(n)
    if len(values) == 1:
        return str(next(iter(values.values())))
    return ";".join(f"{k}={v}" for k, v in values.items())


def _resolve_workers(flag):
    if os.environ.get("OMP_RECOVER_WORKERS"):
        return default_workers()
    return flag if flag else default_workers()


def cmd_run(args):
    base, sweep, out = load_config(args.config)
    points = sweep_points(base, sweep)
    for _, cfg in points:
        cfg.plan()  # surface parameter errors before any work
    workers = _resolve_workers(args.workers)
    outdir = Path(args.out) if args.out else Path(out["dir"])
    outdir.mkdir(parents=True, exist_ok=True)

    reports = []
    for values, cfg in points:
        reports.append((values, run_experiment(cfg, workers=workers)))

    doc = {"spec_version": SPEC_VERSION, "points": []}
    for values, rep in reports:
        entry = {"sweep": values}
        entry.update(rep.to_dict(include_timing=args.timing))
        doc["points"].append(entry)
    (outdir / out["report"]).write_text(json.dumps(doc, indent=2) + "\n")

    stem, suffix = os.path.splitext(out["trials_csv"])
    for i, (values, rep) in enumerate(reports):
        name = out["trials_csv"] if len(reports) == 1 else f"{stem}_{i:03d}{suffix}"
        rep.write_trials_csv(outdir / name)

    with open(outdir / out["plot_csv"], "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sweep_value", "metric", "rate", "bound"])
        for values, rep in reports:
            label = _sweep_label(values, rep.theory["n"])
            floor = 1.0 - rep.theoretical_bound_clamped
            for metric in PLOT_METRICS:
                writer.writerow([label, metric, repr(rep.rates[metric]), repr(floor)])

    if base.record_traces:
        with open(outdir / out["traces"], "w") as fh:
            for i, (values, rep) in enumerate(reports):
                for o in rep.outcomes:
                    fh.write(json.dumps({
                        "point": i,
                        "trial_index": o.trial_index,
                        "detected": [int(j) for j in o.trace.detected],
                        "max_statistics": [s.max_statistic for s in o.trace.steps],
                        "final_max_statistic": o.trace.final_max_statistic,
                        "stop_reason": o.stop_reason.value,
                    }) + "\n")

    for values, rep in reports:
        label = _sweep_label(values, rep.theory["n"])
        print(
            f"[{label}] trials={rep.trials} exact={rep.rates['exact_ok']:.4f} "
            f"failure={rep.empirical_failure_rate:.4f} bound={rep.theoretical_bound_clamped:.4g} "
            f"oracle_violations={rep.oracle_violations}"
        )
    print(f"wrote {outdir}")
    return 0


def _plan_params(args):
    if args.config:
        base, _, _ = load_config(args.config)
        return base.theory_params(), base.k, base.n_rule, base.n, base.p_econd
    need = ["p", "kbar", "a", "sigma"]
    if args.regime == "subgaussian":
        need += ["lmin", "lmax", "lam"]
    missing = [f"--{m if m != 'lam' else 'lambda'}" for m in need if getattr(args, m) is None]
    if missing:
        raise UsageError(f"plan: missing {', '.join(missing)}")
    if args.regime == "subgaussian":
        params = SubGaussianRegimeParams(
            args.p, args.kbar, args.a, args.sigma, args.lmin, args.lmax, args.lam, args.alpha, args.delta
        )
    else:
        params = GaussianRegimeParams(
            args.p, args.kbar, args.a, args.sigma, args.omega0, args.nu, args.eta, args.n,
            args.alpha, args.delta,
        )
    rule = NRule.EXPLICIT if args.n is not None else NRule(args.n_rule)
    return params, args.k, rule, args.n, args.p_econd


def cmd_plan(args):
    params, k, rule, n, p_econd = _plan_params(args)
    consts = plan(params, k, rule, n, p_econd)
    if args.json:
        print(json.dumps({"theory": consts.to_dict()}, indent=2))
        return 0
    print(f"regime: {consts.regime.value}  p={consts.p} k={consts.k} kbar={consts.kbar} "
          f"a={consts.a} sigma={consts.sigma}")
    width = max(len(label) for label, _ in PLAN_ROWS)
    for label, attr in PLAN_ROWS:
        print(f"  {label:<{width}}  {getattr(consts, attr)!r}")
    return 0


def _read_matrix(path):
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
        lengths = {len(r) for r in rows}
        if not rows or len(lengths) != 1:
            raise UsageError(f"{path}: empty file or rows of unequal length")
        return np.array([[float(c) for c in r] for r in rows])
    except ValueError as exc:
        raise UsageError(f"{path}: non-numeric entry ({exc})") from None
    except OSError as exc:
        raise UsageError(f"{path}: {exc.strerror}") from None


def _parse_support(text, p):
    if text is None or text.strip() == "":
        return []
    if text.strip() == "all":
        return list(range(p))
    try:
        idx = sorted({int(t) for t in text.split(",") if t.strip()})
    except ValueError:
        raise UsageError(f"--support: expected comma-separated column indices, got {text!r}") from None
    if idx and (idx[0] < 0 or idx[-1] >= p):
        raise UsageError(f"--support: indices must lie in [0, {p - 1}]")
    return idx


def cmd_check(args):
    x = _read_matrix(args.matrix)
    support = _parse_support(args.support, x.shape[1])
    noise = None
    if args.noise:
        noise = _read_matrix(args.noise).ravel()
        if noise.size != x.shape[0]:
            raise UsageError(f"--noise has {noise.size} entries, matrix has {x.shape[0]} rows")
    report = verify_conditions(x, support, noise, args.sigma, args.lmin, args.lmax, args.lam)
    if args.json:
        print(json.dumps(report.to_dict(), indent=2))
        return 0
    for key, value in report.to_dict().items():
        print(f"  {key:<15}  {value!r}")
    return 0


def cmd_tails(args):
    rep = check_tail_bounds(args.trials, args.n, args.p, args.seed, args.a)
    if args.json:
        print(json.dumps(rep.to_dict(), indent=2))
        return 0
    print(f"max |W_j| > {rep.max_threshold:.6g}: rate {rep.max_exceed_rate!r} "
          f"bound {rep.max_bound!r} (gaussian {rep.max_bound_gaussian!r}) ok={rep.max_ok}")
    print(f"||W||/sqrt(n) >= {rep.chi_threshold:.6g}: rate {rep.chi_exceed_rate!r} "
          f"bound {rep.chi_bound!r} ok={rep.chi_ok}")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(2)


def build_parser():
    parser = _Parser(prog="omp-recover", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("plan", help="evaluate constants, thresholds and sufficient n")
    p.add_argument("--config", help="take parameters from a run configuration")
    p.add_argument("--regime", choices=["subgaussian", "gaussian"], default="subgaussian")
    p.add_argument("--p", type=int)
    p.add_argument("--kbar", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--a", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--lmin", type=float)
    p.add_argument("--lmax", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--omega0", type=float, default=0.0)
    p.add_argument("--nu", type=float, default=0.0)
    p.add_argument("--eta", type=float, default=0.0)
    p.add_argument("--alpha", type=float)
    p.add_argument("--delta", type=float, default=3.0)
    p.add_argument("--n", type=int, help="evaluate at this n instead of a sufficient one")
    p.add_argument("--n-rule", choices=["theorem", "corollary"], default="corollary")
    p.add_argument("--p-econd", type=float, default=0.0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_plan)

    r = sub.add_parser("run", help="run experiments from a JSON configuration")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (overrides output.dir)")
    r.add_argument("--workers", type=int, help="worker processes (default: available CPUs)")
    r.add_argument("--timing", action="store_true", help="include wall time in the report")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("check", help="check eigenvalue and noise conditions on a CSV matrix")
    c.add_argument("matrix")
    c.add_argument("--support", help="comma-separated 0-based column indices, or 'all'")
    c.add_argument("--noise", help="CSV file holding the noise vector")
    c.add_argument("--sigma", type=float, default=1.0)
    c.add_argument("--lmin", type=float)
    c.add_argument("--lmax", type=float)
    c.add_argument("--lambda", dest="lam", type=float)
    c.add_argument("--json", action="store_true")
    c.set_defaults(func=cmd_check)

    t = sub.add_parser("tails", help="Monte Carlo check of the Gaussian tail bounds")
    t.add_argument("--trials", type=int, default=100_000)
    t.add_argument("--n", type=int, default=64)
    t.add_argument("--p", type=int, default=256)
    t.add_argument("--a", type=float, default=1.0)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--json", action="store_true")
    t.set_defaults(func=cmd_tails)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, DomainError, SigmaNotPD) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (OmpRecoverError, OSError, ArithmeticError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
