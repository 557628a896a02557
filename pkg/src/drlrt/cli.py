"""Command-line interface.

Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import re
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__, limit
from .crossfit import crossfit_ci, crossfit_critical_value, crossfit_test, parametric_factory, prepare_crossfit
from .errors import DataError, DrlrtError, NumericError, SchemaMismatch
from .isotonic import constrained_fit
from .lrt import confidence_interval, critical_value, lr_test, prepare
from .nuisance import (
    FEATURE_MAPS,
    Dataset,
    IdentityNuisance,
    fit_nuisance,
    load_external_nuisance,
)
from .pseudo import compute as compute_pseudo

log = logging.getLogger("drlrt")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
LARGE_N_WARNING = 20_000


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------
# input


def read_dataset(path, y_col="y", a_col="a", l_cols=None) -> Dataset:
    """Read a headed CSV; confounders default to every ``l<k>`` column."""
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"{path}: {exc}") from exc
    df.columns = [c.strip() for c in df.columns]
    if l_cols is None:
        l_cols = sorted((c for c in df.columns if re.fullmatch(r"l\d+", c)),
                        key=lambda c: int(c[1:]))
    for col in [y_col, a_col, *l_cols]:
        if col not in df.columns:
            raise SchemaMismatch(f"{path}: missing column {col!r} (have {list(df.columns)})")
    numeric = {}
    for col in [y_col, a_col, *l_cols]:
        raw = df[col].str.strip()
        if (raw == "").any() or raw.str.upper().isin(["NA", "NAN", "NULL"]).any():
            raise SchemaMismatch(f"{path}: column {col!r} has empty or NA cells")
        try:
            numeric[col] = np.array([float(v) for v in raw])
        except ValueError as exc:
            raise SchemaMismatch(f"{path}: column {col!r}: {exc}") from exc
    L = np.column_stack([numeric[c] for c in l_cols]) if l_cols else np.empty((len(df), 0))
    data = Dataset(L, numeric[a_col], numeric[y_col])
    if data.n > LARGE_N_WARNING:
        log.warning("n=%d: pairwise nuisance averages cost O(n^2)", data.n)
    return data


def _seed(args) -> int | None:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("DRLRT_SEED")
    return int(env) if env else None


def _model(args, data: Dataset):
    if args.nuisance == "identity":
        return IdentityNuisance()
    if args.nuisance == "external":
        if not args.nuisance_file:
            raise UsageError("--nuisance external needs --nuisance-file")
        return load_external_nuisance(args.nuisance_file, args.mu_matrix)
    return fit_nuisance(data, args.outcome_spec, args.propensity_spec, args.sigma2,
                        truncation_floor=args.truncation)


def _variance(args) -> str:
    if args.variance:
        return args.variance
    return "rice" if args.nuisance == "identity" else "kernel"


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _json(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


# --------------------------------------------------------------------------
# subcommands


def cmd_test(args) -> int:
    return _test_or_ci(args, want_ci=False)


def cmd_ci(args) -> int:
    return _test_or_ci(args, want_ci=True)


def _test_or_ci(args, want_ci: bool) -> int:
    if not want_ci and args.t0 is None:
        raise UsageError("test needs --t0")
    data = read_dataset(args.input, args.y_col, args.a_col, args.l_cols)
    seed = _seed(args)
    limit_cfg = limit.LimitSimConfig(args.beta_bound, n_mc=args.limit_n_mc,
                                     seed=seed if seed is not None else limit.LimitSimConfig.seed)
    if args.K > 1:
        if args.nuisance != "parametric":
            raise UsageError("cross-fitting (--K > 1) refits nuisances; use --nuisance parametric")
        factory = parametric_factory(args.outcome_spec, args.propensity_spec, args.sigma2,
                                     args.truncation)
        problem = prepare_crossfit(data, args.a0, args.K, seed, factory,
                                   direction=args.direction, bandwidth=args.bandwidth)
        q = crossfit_critical_value(args.alpha, args.beta_bound, args.K, limit_cfg, args.threads)
        if want_ci:
            out = crossfit_ci(problem, args.alpha, args.beta_bound, q_crit=q).to_dict()
            out["K"] = args.K
            if args.t0 is not None:
                res = crossfit_test(problem, args.t0, args.alpha, args.beta_bound, q_crit=q)
                out.update({k: v for k, v in res.to_dict().items() if v is not None and k not in ("ci_lower", "ci_upper")})
        else:
            out = crossfit_test(problem, args.t0, args.alpha, args.beta_bound, q_crit=q).to_dict()
    else:
        model = _model(args, data)
        xi = compute_pseudo(data, model).xi
        mode = "noncausal" if isinstance(model, IdentityNuisance) else "causal"
        problem = prepare(data.A, xi, args.a0, variance=_variance(args), bandwidth=args.bandwidth,
                          direction=args.direction, mode=mode)
        q = critical_value(args.alpha, args.beta_bound, args.policy, limit_cfg, threads=args.threads)
        out = None
        if args.t0 is not None:
            out = lr_test(problem, args.t0, args.alpha, args.beta_bound, q_crit=q).to_dict()
        if want_ci:
            ci = confidence_interval(problem, args.alpha, args.beta_bound, q_crit=q).to_dict()
            if out is None:
                out = ci
            else:
                out["ci_lower"], out["ci_upper"] = ci["ci_lower"], ci["ci_upper"]
    out["seed"] = seed
    _emit(_json(out), args.out)
    return EXIT_OK


def cmd_critvals(args) -> int:
    seed = _seed(args)
    if seed is None:
        seed = limit.LimitSimConfig.seed
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["beta", "alpha", "q", "mc_se", "n_mc", "seed"])
    worst = 0.0
    for beta in args.beta:
        if args.policy == "table":
            for level in args.alpha:
                w.writerow([repr(beta), repr(level), repr(limit.table_q(level, beta)), repr(0.0), 0, seed])
            continue
        cfg = limit.LimitSimConfig(beta, args.half_width, args.grid_step, args.n_mc, seed)
        if args.K > 1:
            draws = limit.crossfit_reference(beta, args.K, cfg, args.threads)
        else:
            draws = limit.quantiles(beta, cfg, args.threads)
        for level in args.alpha:
            q = draws.quantile(level)
            w.writerow([repr(beta), repr(level), repr(q), repr(draws.quantile_se(level)), args.n_mc, seed])
            if args.check_paper and (level, beta) in limit.CRITICAL_VALUES:
                worst = max(worst, abs(q - limit.CRITICAL_VALUES[level, beta]))
    _emit(buf.getvalue(), args.out)
    if args.check_paper and worst > 0.08:
        print(f"critvals: largest deviation from the published table is {worst:.3f} > 0.08",
              file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_simulate(args) -> int:
    from . import simulate as sim

    s, scenario = sim.parse_scenario(args.scenario)
    n, n_mc = args.n, args.n_mc
    if args.smoke:
        n, n_mc = 200, 2
    seed = _seed(args)
    spec = sim.ExperimentSpec(
        s=s, n=n, scenario=scenario, method=args.method, alpha=args.alpha,
        beta_bound=args.beta_bound, K=args.K if args.method == "lrt_ss" else 1,
        eval_points=tuple(args.eval_points), n_mc=n_mc,
        base_seed=seed if seed is not None else 2024, policy=args.policy,
        limit_n_mc=args.limit_n_mc, nuisance_dir=args.nuisance_dir,
    )
    if args.dump_datasets:
        sim.dump_datasets(spec, args.dump_datasets)
        return EXIT_OK
    result = sim.run_experiment(spec, threads=args.threads)
    log.info("simulation finished in %.1fs", result.wall_time)
    if args.out:
        manifest = args.manifest or str(Path(args.out).with_suffix(".manifest.json"))
        sim.write_outputs(result, args.out, manifest)
    else:
        sys.stdout.write(result.to_csv())
        if args.manifest:
            Path(args.manifest).write_text(_json(result.manifest()))
    return EXIT_OK


def cmd_pseudo(args) -> int:
    data = read_dataset(args.input, args.y_col, args.a_col, args.l_cols)
    model = _model(args, data)
    xi = compute_pseudo(data, model).xi
    a0 = args.a0 if args.a0 is not None else float(data.A.min())
    problem = prepare(data.A, xi, a0, variance=_variance(args), bandwidth=args.bandwidth,
                      direction=args.direction)
    sign = problem.sign
    cols = {
        "row": problem.sample.perm,
        "a": problem.sample.a,
        "xi": sign * problem.sample.xi,
        "theta_full": sign * problem.full.values,
    }
    if args.t0 is not None:
        null = constrained_fit(problem.sample.xi, problem.k0, sign * args.t0, problem.full)
        cols["theta_null"] = sign * null.values
    buf = io.StringIO()
    pd.DataFrame(cols).to_csv(buf, index=False, float_format="%.17g", lineterminator="\n")
    _emit(buf.getvalue(), args.out)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def _data_args(p):
    p.add_argument("--input", "-i", required=True, help="CSV with header")
    p.add_argument("--y-col", default="y")
    p.add_argument("--a-col", default="a")
    p.add_argument("--l-cols", type=lambda s: [c.strip() for c in s.split(",") if c.strip()],
                   default=None, help="comma-separated confounder columns (default: l1..ld)")
    p.add_argument("--nuisance", choices=("parametric", "identity", "external"), default="parametric")
    p.add_argument("--outcome-spec", choices=sorted(FEATURE_MAPS), default="well_specified_y")
    p.add_argument("--propensity-spec", choices=sorted(FEATURE_MAPS), default="well_specified_a")
    p.add_argument("--sigma2", type=float, default=None,
                   help="known conditional treatment variance (default: residual variance)")
    p.add_argument("--truncation", type=float, default=0.01, help="floor for the propensity density")
    p.add_argument("--nuisance-file", default=None)
    p.add_argument("--mu-matrix", default=None)
    p.add_argument("--direction", choices=("increasing", "decreasing"), default="increasing")
    p.add_argument("--bandwidth", type=float, default=None)
    p.add_argument("--variance", choices=("kernel", "rice"), default=None)


def _common(p):
    p.add_argument("--seed", type=int, default=None, help="default: $DRLRT_SEED")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", "-o", default=None)


def _inference_args(p, t0_required=False):
    p.add_argument("--a0", type=float, required=True)
    p.add_argument("--t0", type=float, default=None, required=t0_required)
    p.add_argument("--alpha", type=float, default=0.10)
    p.add_argument("--beta-bound", type=float, default=5.0)
    p.add_argument("--K", type=int, default=1, help="folds for cross-fitting (1 = none)")
    p.add_argument("--policy", choices=limit.POLICIES, default="table")
    p.add_argument("--limit-n-mc", type=int, default=10_000)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="drlrt", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("test", help="likelihood-ratio test of theta(a0) = t0")
    _data_args(p)
    _inference_args(p, t0_required=True)
    _common(p)
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("ci", help="confidence interval for theta(a0) by test inversion")
    _data_args(p)
    _inference_args(p)
    _common(p)
    p.set_defaults(func=cmd_ci)

    p = sub.add_parser("critvals", help="simulated quantiles of the limit law")
    p.add_argument("--beta", type=float, nargs="+", default=list(limit.BETAS))
    p.add_argument("--alpha", type=float, nargs="+", default=list(limit.LEVELS),
                   help="quantile levels, e.g. 0.95")
    p.add_argument("--n-mc", type=int, default=10_000)
    p.add_argument("--half-width", type=float, default=5.0)
    p.add_argument("--grid-step", type=float, default=0.005)
    p.add_argument("--K", type=int, default=1)
    p.add_argument("--policy", choices=("simulate", "table"), default="simulate")
    p.add_argument("--check-paper", action="store_true",
                   help="fail if any simulated cell is more than 0.08 from the published table")
    _common(p)
    p.set_defaults(func=cmd_critvals)

    p = sub.add_parser("simulate", help="coverage/level study on the built-in design")
    p.add_argument("--scenario", default="model1-bothwell")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--n-mc", type=int, default=300)
    p.add_argument("--method", choices=("lrt", "lrt_ss"), default="lrt")
    p.add_argument("--K", type=int, default=2)
    p.add_argument("--alpha", type=float, default=0.10)
    p.add_argument("--beta-bound", type=float, default=5.0)
    p.add_argument("--eval-points", type=float, nargs="+", default=[0.0, 1.0, 1.5, 3.0, 7.0, 11.0, 15.0])
    p.add_argument("--policy", choices=limit.POLICIES, default="table")
    p.add_argument("--limit-n-mc", type=int, default=10_000)
    p.add_argument("--nuisance-dir", default=None)
    p.add_argument("--dump-datasets", default=None, metavar="DIR")
    p.add_argument("--manifest", default=None)
    p.add_argument("--smoke", action="store_true", help="n=200, two replications")
    _common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("pseudo", help="pseudo-outcomes and fits as CSV")
    _data_args(p)
    p.add_argument("--a0", type=float, default=None)
    p.add_argument("--t0", type=float, default=None)
    _common(p)
    p.set_defaults(func=cmd_pseudo)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        if args.verbose:
            logging.getLogger().setLevel(logging.INFO)
        if getattr(args, "threads", 1) < 1:
            raise UsageError("--threads must be >= 1")
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DrlrtError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
