"""Command-line interface: ``ebglm {fit,predict,simulate,bench,penalty-curve,verify}``.

Exit codes: 0 success, 1 user error (bad flag, unreadable or malformed
input), 2 numerical failure.  Tables go to stdout, diagnostics to stderr.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import DEFAULT_REPS, load_grid, run_bench, summary_path, write_bench
from .errors import DataError, DegeneratePriorError
from .family import Family
from .io import FORMAT_VERSION, load_csv, load_features, load_model, save_model, write_csv
from .penalty import eval_penalty
from .priors import PRIOR_NAMES, NormalMixture, PointLaplace, PointNormal
from .sim import BETA_DISTS, CORR_MODELS, SimConfig, simulate
from .solver import SolverConfig, fit, predict

log = logging.getLogger("ebglm")

FAMILY_CHOICES = ("gaussian", "logistic", "poisson")


class UsageError(DataError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def available_cores() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _add_solver_flags(p):
    d = SolverConfig()
    g = p.add_argument_group("solver")
    g.add_argument("--m", type=_positive_int, default=d.m, help="L-BFGS memory (default %(default)s)")
    g.add_argument("--max-outer", type=_positive_int, default=d.outer_max_iter,
                   help="outer s2-refresh iterations (default %(default)s)")
    g.add_argument("--max-inner", type=_positive_int, default=d.inner_max_iter,
                   help="L-BFGS iterations per outer step (default %(default)s)")
    g.add_argument("--grad-tol", type=float, default=d.grad_tol, help="default %(default)s")
    g.add_argument("--obj-tol", type=float, default=d.obj_rel_tol,
                   help="relative objective change tolerance (default %(default)s)")
    g.add_argument("--root-tol", type=float, default=d.root_tol,
                   help="tolerance of the posterior-mean inversion (default %(default)s)")
    g.add_argument("--seed", type=int, default=d.seed, help="default %(default)s")


def _solver_config(args) -> SolverConfig:
    return SolverConfig(m=args.m, inner_max_iter=args.max_inner, outer_max_iter=args.max_outer,
                        grad_tol=args.grad_tol, obj_rel_tol=args.obj_tol, root_tol=args.root_tol,
                        seed=args.seed)


def _family(args) -> Family:
    if args.family == "gaussian":
        if args.dispersion is None:
            raise UsageError("--dispersion is required with --family gaussian")
        return Family("gaussian", args.dispersion)
    if args.dispersion not in (None, 1.0):
        raise UsageError(f"--dispersion applies only to --family gaussian ({args.family} has a(phi) = 1)")
    return Family(args.family)


def _read_init_theta(path, p: int) -> np.ndarray:
    try:
        lines = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    except FileNotFoundError:
        raise UsageError(f"--init-theta: file not found: {path}") from None
    vals = []
    for k, ln in enumerate(lines):
        cell = ln.split(",")[-1].strip()
        try:
            vals.append(float(cell))
        except ValueError:
            if k == 0:
                continue  # header line
            raise UsageError(f"--init-theta: {path} line {k + 1}: {cell!r} is not a number") from None
    theta = np.array(vals)
    if theta.shape != (p,) or not np.all(np.isfinite(theta)):
        raise UsageError(f"--init-theta: {path} holds {theta.size} finite values, expected {p}")
    return theta


# -- subcommands -------------------------------------------------------------


def cmd_fit(args) -> int:
    family = _family(args)
    config = _solver_config(args)
    data = load_csv(args.data, has_header=not args.no_header, response_column=args.response,
                    intercept=not args.no_intercept, standardize=args.standardize)
    init = _read_init_theta(args.init_theta, data.p) if args.init_theta else None
    log.info("fitting %s/%s on n=%d, p=%d", family.cli_name, args.prior, data.n, data.p)
    res = fit(data, family, args.prior, config, init_theta=init, ash_K=args.ash_K)
    if not math.isfinite(res.objective):
        log.error("fit ended at a non-finite objective")
        return 2
    if res.stalled and not res.converged:
        log.warning("line search stalled; the result is the last accepted iterate")
    log.info("objective %.10g after %d outer / %d inner iterations (converged=%s)",
             res.objective, res.outer_iters, res.inner_iters, res.converged)
    save_model(res, args.out)
    if args.coef_out:
        sm = res.summary
        header = ["name", "theta", "posterior_sd", "nonzero_prob"]
        cols = [res.coef_names, res.theta, sm.sd, sm.nonzero_prob]
        if res.standardization is not None:
            header.append("theta_original_scale")
            cols.append(res.standardization.to_original(res.theta, res.has_intercept))
        write_csv(args.coef_out, header, cols)
    return 0


def cmd_predict(args) -> int:
    model = load_model(args.model)
    features = load_features(args.data, model.feature_names, has_header=not args.no_header)
    pred = predict(model, features, kind=args.type)
    write_csv(args.out, ["prediction"], [pred])
    return 0


def cmd_simulate(args) -> int:
    cfg = SimConfig(n=args.n, p=args.p, s=args.s, rho=args.rho, beta_dist=args.beta_dist,
                    family=args.family, n_test=args.n_test, seed=args.seed,
                    corr_model=args.corr_model, dispersion=args.dispersion or 1.0)
    train, test, beta = simulate(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names = list(train.feature_names) + ["y"]
    for label, ds in (("train", train), ("test", test)):
        if ds is None:
            continue
        cols = [ds.X[:, j] for j in range(1, ds.p)] + [ds.y]
        write_csv(out / f"{label}.csv", names, cols)
    write_csv(out / "beta.csv", ["name", "beta"], [list(train.feature_names), beta])
    log.info("wrote %s", ", ".join(str(out / f) for f in ("train.csv", "test.csv", "beta.csv")))
    return 0


def cmd_bench(args) -> int:
    grid = load_grid(args.grid)
    threads = args.threads or available_cores()

    def progress(k, total):
        if not args.quiet:
            print(f"\r[{k}/{total}] replications done", end="\n" if k == total else "", file=sys.stderr)

    result = run_bench(grid, reps=args.reps, seed=args.seed, solver=_solver_config(args),
                       threads=threads, progress=progress)
    write_bench(result, args.out)
    failed = sum(1 for row in result.rows if str(row[-1]).startswith("error"))
    if failed:
        log.warning("%d replication(s) failed; see the status column", failed)
    log.info("wrote %s and %s", args.out, summary_path(args.out))
    return 0


def _parse_params(text: str) -> dict:
    out = {}
    for item in filter(None, (t.strip() for t in text.split(","))):
        if "=" not in item:
            raise UsageError(f"--params: expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = [float(x) for x in v.split(":")]
        except ValueError:
            raise UsageError(f"--params: {k.strip()!r} has a non-numeric value {v!r}") from None
    return out


def _prior_from_params(name: str, text: str):
    params = _parse_params(text)
    need = {"point-normal": ("pi0", "sigma2"), "point-laplace": ("pi0", "scale"),
            "ash": ("weights", "variances")}[name]
    if set(params) != set(need):
        raise UsageError(f"--params for --prior {name} must set exactly {', '.join(need)}")
    if name == "ash":
        return NormalMixture(np.array(params["weights"]), np.array(params["variances"]))
    for k in need:
        if len(params[k]) != 1:
            raise UsageError(f"--params: {k} takes a single value")
    cls = PointNormal if name == "point-normal" else PointLaplace
    return cls(params[need[0]][0], params[need[1]][0])


def _parse_grid(text: str) -> np.ndarray:
    parts = text.split(":")
    try:
        lo, hi, step = (float(x) for x in parts)
    except ValueError:
        raise UsageError(f"--grid: expected lo:hi:step, got {text!r}") from None
    if not (step > 0 and hi >= lo):
        raise UsageError("--grid: need step > 0 and hi >= lo")
    k = int(math.floor((hi - lo) / step + 1e-9))
    return lo + step * np.arange(k + 1)


def cmd_penalty_curve(args) -> int:
    prior = _prior_from_params(args.prior, args.params)
    if not args.s2 > 0:
        raise UsageError("--s2 must be positive")
    grid = _parse_grid(args.grid)
    pe = eval_penalty(grid, prior, args.s2, args.root_tol)
    write_csv(args.out, ["theta", "r", "z"], [grid, pe.r, pe.z])
    return 0


def cmd_verify(args) -> int:
    from .verify import run_suite

    checks = run_suite(args.suite)
    for c in checks:
        print(c.line())
    bad = sum(not c.passed for c in checks)
    log.info("%d/%d checks passed", len(checks) - bad, len(checks))
    return 0 if bad == 0 else 2


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--quiet", action="store_true", help="silence progress and informational messages")

    parser = _Parser(prog="ebglm", description="Empirical Bayes GLMs with a penalty on posterior means.")
    parser.add_argument("--version", action="version",
                        version=f"ebglm {__version__} (model format_version {FORMAT_VERSION})")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("fit", parents=[common], help="fit a model to a CSV file")
    p.add_argument("--data", required=True, help="training CSV")
    p.add_argument("--response", default="y", help="response column name or 0-based index (default y)")
    p.add_argument("--no-header", action="store_true", help="CSV has no header row")
    p.add_argument("--family", required=True, choices=FAMILY_CHOICES)
    p.add_argument("--dispersion", type=float, help="a(phi) for --family gaussian (required there)")
    p.add_argument("--prior", default="point-normal", choices=PRIOR_NAMES)
    p.add_argument("--ash-K", type=_positive_int, default=20, help="ash grid size minus one (default 20)")
    p.add_argument("--init-theta", help="file of starting coefficients, one per line, intercept first")
    p.add_argument("--threads", type=_positive_int, help="accepted for symmetry with bench; fits are single-threaded")
    p.add_argument("--standardize", action="store_true", help="center/scale features (recorded in the model)")
    p.add_argument("--no-intercept", action="store_true")
    p.add_argument("--out", required=True, help="model document path")
    p.add_argument("--coef-out", help="optional CSV of coefficient summaries ('-' for stdout)")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", parents=[common], help="predict from a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="CSV with the training feature columns")
    p.add_argument("--no-header", action="store_true")
    p.add_argument("--type", default="response", choices=("link", "response"))
    p.add_argument("--out", default="-", help="output CSV (default stdout)")
    p.set_defaults(func=cmd_predict)

    d = SimConfig()
    p = sub.add_parser("simulate", parents=[common], help="write a synthetic train/test split")
    p.add_argument("--n", type=_positive_int, default=d.n)
    p.add_argument("--p", type=_positive_int, default=d.p)
    p.add_argument("--s", type=int, default=d.s)
    p.add_argument("--rho", type=float, default=d.rho)
    p.add_argument("--beta-dist", default=d.beta_dist, choices=BETA_DISTS)
    p.add_argument("--family", default=d.family, choices=FAMILY_CHOICES)
    p.add_argument("--dispersion", type=float, help="noise variance for --family gaussian (default 1)")
    p.add_argument("--n-test", type=int, default=d.n_test)
    p.add_argument("--corr-model", default=d.corr_model, choices=CORR_MODELS)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench", parents=[common], help="run a simulation grid")
    p.add_argument("--grid", required=True, help="TOML grid file")
    p.add_argument("--reps", type=_positive_int, default=DEFAULT_REPS)
    p.add_argument("--out", required=True, help="long-format results CSV")
    p.add_argument("--threads", type=_positive_int, help="worker processes (default: available cores)")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("penalty-curve", parents=[common], help="tabulate r(theta) for a fixed prior")
    p.add_argument("--prior", required=True, choices=PRIOR_NAMES)
    p.add_argument("--params", required=True,
                   help="e.g. pi0=0.5,sigma2=1 | pi0=0.5,scale=1 | weights=0.5:0.5,variances=0:1")
    p.add_argument("--s2", type=float, required=True)
    p.add_argument("--grid", required=True, help="lo:hi:step")
    p.add_argument("--root-tol", type=float, default=1e-10)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_penalty_curve)

    p = sub.add_parser("verify", parents=[common], help="run the numerical self-checks")
    p.add_argument("--suite", default="all", choices=("bnm", "penalty", "gradient", "all"))
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="ebglm: %(message)s", stream=sys.stderr, force=True)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"ebglm {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"ebglm {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (DegeneratePriorError, ArithmeticError) as exc:
        print(f"ebglm {args.command}: numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
