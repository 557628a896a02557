"""Simulation study: confounded Gaussian design with a decreasing dose-response curve.

Each replication draws its own dataset from the substream keyed by
(base_seed, r), so results do not depend on how replications are scheduled.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, limit
from .crossfit import crossfit_ci, crossfit_critical_value, crossfit_test, parametric_factory, prepare_crossfit
from .errors import DataError, DrlrtError, NumericError
from .isotonic import pava
from .lrt import confidence_interval, critical_value, lr_test, prepare
from .nuisance import Dataset, fit_nuisance, load_external_nuisance
from .pseudo import compute as compute_pseudo

log = logging.getLogger(__name__)

D = 4
TREATMENT_MEAN = 7.5
TREATMENT_SD = 7.5
NOISE_SD = 0.5
C_CAP = 0.4 * 1.5 ** 4
EVAL_POINTS = (0.0, 1.0, 1.5, 3.0, 7.0, 11.0, 15.0)
# no coverage claim where the left and right derivatives differ
PATHOLOGICAL_POINTS = (1.5,)

SCENARIOS = {
    "both_well": ("well_specified_y", "well_specified_a"),
    "mu_well_pi_mis": ("well_specified_y", "misspecified_a"),
    "pi_well_mu_mis": ("misspecified_y", "well_specified_a"),
    "external": (None, None),
}
_SCENARIO_ALIASES = {
    "bothwell": "both_well", "muwell": "mu_well_pi_mis",
    "piwell": "pi_well_mu_mis", "external": "external",
}
MODELS = {1: 0.1, 2: 0.2}

CSV_COLUMNS = ("scenario", "s", "n", "method", "K", "a", "coverage", "cov_se",
               "avg_length", "len_se", "level", "level_se", "n_mc", "failures")


@dataclass(frozen=True)
class DgpConfig:
    s: float = 0.1
    n: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.s < 0:
            raise ValueError("confounding strength must be nonnegative")
        if self.n < 50:
            raise ValueError("n must be at least 50")


def c_fn(a):
    a = np.asarray(a, dtype=float)
    return np.where(np.abs(a) <= 1.5, -0.4 * np.sign(a) * a ** 4, -np.sign(a) * C_CAP)


def outcome_mean(a, L, s):
    a = np.asarray(a, dtype=float)
    L = np.asarray(L, dtype=float)
    conf = s * (2 * L[:, 0] + 2 * L[:, 1] - 2 * L[:, 2] - 2 * L[:, 3])
    return 1 + conf + 0.0025 * a * (1 - L[:, 0] + L[:, 2] - 0.2 * a ** 2) + c_fn(a)


def true_theta(a, convention: str = "gcomputed"):
    """The curve the study targets.

    ``"gcomputed"`` averages the outcome mean over the confounders,
    ``1 + 0.0025 a - 0.0005 a**3 + c(a)``, which is what the pseudo-outcome
    regression estimates. ``"printed"`` drops the ``1 + 0.0025 a`` offset:
    ``c(a) - 0.0005 a**3``.
    """
    a = np.asarray(a, dtype=float)
    base = c_fn(a) - 0.0005 * a ** 3
    if convention == "printed":
        out = base
    elif convention == "gcomputed":
        out = base + 1 + 0.0025 * a
    else:
        raise ValueError(f"unknown convention {convention!r}")
    return out if out.ndim else float(out)


def draw_dataset(config: DgpConfig, rng: np.random.Generator | None = None) -> Dataset:
    if rng is None:
        rng = np.random.default_rng(config.seed)
    n, s = config.n, config.s
    L = rng.standard_normal((n, D))
    shift = s * (L[:, 0] + L[:, 1] - L[:, 2] - L[:, 3])
    A = TREATMENT_MEAN + shift + TREATMENT_SD * rng.standard_normal(n)
    Y = outcome_mean(A, L, s) + NOISE_SD * rng.standard_normal(n)
    return Dataset(L, A, Y)


def parse_scenario(name: str) -> tuple[float, str]:
    """``model1-bothwell`` -> (0.1, "both_well")."""
    try:
        model, kind = name.lower().split("-", 1)
        s = MODELS[int(model.removeprefix("model"))]
        return s, _SCENARIO_ALIASES[kind]
    except (ValueError, KeyError):
        raise DataError(
            f"bad scenario {name!r}; expected model{{1,2}}-{{{','.join(_SCENARIO_ALIASES)}}}"
        ) from None


@dataclass(frozen=True)
class ExperimentSpec:
    s: float = 0.1
    n: int = 1000
    scenario: str = "both_well"
    method: str = "lrt"
    alpha: float = 0.10
    beta_bound: float = 5.0
    K: int = 2
    eval_points: tuple[float, ...] = EVAL_POINTS
    n_mc: int = 300
    base_seed: int = 2024
    policy: str = "table"
    limit_n_mc: int = 10_000
    limit_seed: int = 20240101
    nuisance_dir: str | None = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise DataError(f"unknown scenario {self.scenario!r}")
        if self.method not in ("lrt", "lrt_ss"):
            raise DataError(f"unknown method {self.method!r}")
        if any(not 0 <= a <= 15 for a in self.eval_points):
            raise DataError("evaluation points must lie in [0, 15]")
        if self.scenario == "external" and self.nuisance_dir is None:
            raise DataError("external scenario needs nuisance_dir")
        if self.scenario == "external" and self.method == "lrt_ss":
            raise DataError("external nuisances cannot be refit per fold")
        DgpConfig(self.s, self.n)

    @property
    def k_effective(self) -> int:
        return self.K if self.method == "lrt_ss" else 1


@dataclass
class PointTally:
    covered: int = 0
    rejected: int = 0
    lengths: list[float] = field(default_factory=list)


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    rows: list[dict]
    failures: int
    wall_time: float = 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in self.rows:
            w.writerow({k: _fmt(v) for k, v in row.items()})
        return buf.getvalue()

    def manifest(self) -> dict:
        return {
            "version": __version__,
            "spec": asdict(self.spec),
            "replication_seeds": f"SeedSequence({self.spec.base_seed}, spawn_key=(r,)) for r < {self.spec.n_mc}",
            "failures": self.failures,
        }

    def row_at(self, a: float) -> dict:
        for row in self.rows:
            if row["a"] == a:
                return row
        raise KeyError(a)


def _fmt(v):
    return repr(v) if isinstance(v, float) else v


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def _nuisance_for(spec: ExperimentSpec, data: Dataset, r: int):
    if spec.scenario == "external":
        base = Path(spec.nuisance_dir)
        mat = base / f"mu_matrix_{r}.csv"
        return load_external_nuisance(base / f"nuisance_{r}.csv", mat if mat.exists() else None)
    y_spec, a_spec = SCENARIOS[spec.scenario]
    return fit_nuisance(data, y_spec, a_spec, sigma2=TREATMENT_SD ** 2)


def run_replication(spec: ExperimentSpec, r: int, q_crit: float):
    """Per evaluation point: (covered, rejected at truth, interval length)."""
    rng = _rng(spec.base_seed, r)
    data = draw_dataset(DgpConfig(spec.s, spec.n), rng)
    out = []
    if spec.method == "lrt":
        xi = compute_pseudo(data, _nuisance_for(spec, data, r)).xi
        full = pava(-xi[np.argsort(data.A, kind="stable")])
        for a in spec.eval_points:
            truth = true_theta(a)
            problem = prepare(data.A, xi, a, direction="decreasing", full=full)
            ci = confidence_interval(problem, spec.alpha, spec.beta_bound, q_crit=q_crit)
            res = lr_test(problem, truth, spec.alpha, spec.beta_bound, q_crit=q_crit)
            out.append((ci.contains(truth), res.reject, ci.length))
    else:
        y_spec, a_spec = SCENARIOS[spec.scenario]
        factory = parametric_factory(y_spec, a_spec, sigma2=TREATMENT_SD ** 2)
        fold_seed = int(rng.integers(2 ** 63))
        for a in spec.eval_points:
            truth = true_theta(a)
            problem = prepare_crossfit(data, a, spec.K, fold_seed, factory, direction="decreasing")
            ci = crossfit_ci(problem, spec.alpha, spec.beta_bound, q_crit=q_crit)
            res = crossfit_test(problem, truth, spec.alpha, spec.beta_bound, q_crit=q_crit)
            out.append((ci.contains(truth), res.reject, ci.length))
    return out


def reference_q(spec: ExperimentSpec, threads: int = 1) -> float:
    if spec.method == "lrt":
        return critical_value(spec.alpha, spec.beta_bound, spec.policy)
    config = limit.LimitSimConfig(spec.beta_bound, n_mc=spec.limit_n_mc, seed=spec.limit_seed)
    return crossfit_critical_value(spec.alpha, spec.beta_bound, spec.K, config, threads)


def run_experiment(spec: ExperimentSpec, threads: int = 1) -> ExperimentResult:
    t_start = time.perf_counter()
    q_crit = reference_q(spec, threads)

    def one(r):
        try:
            return run_replication(spec, r, q_crit)
        except (DrlrtError, FloatingPointError) as exc:
            log.warning("replication %d failed: %s", r, exc)
            return None

    reps = range(spec.n_mc)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, reps))
    else:
        results = [one(r) for r in reps]
    failures = sum(res is None for res in results)
    if failures > 0.01 * spec.n_mc:
        raise NumericError(f"{failures} of {spec.n_mc} replications failed")

    tallies = [PointTally() for _ in spec.eval_points]
    for res in results:
        if res is None:
            continue
        for tally, (covered, rejected, length) in zip(tallies, res):
            tally.covered += covered
            tally.rejected += rejected
            tally.lengths.append(length)

    ok = spec.n_mc - failures
    rows = []
    for a, tally in zip(spec.eval_points, tallies):
        cov = tally.covered / ok
        lvl = tally.rejected / ok
        lengths = np.asarray(tally.lengths)
        len_se = float(lengths.std(ddof=1) / math.sqrt(ok)) if ok > 1 else math.nan
        rows.append({
            "scenario": spec.scenario, "s": spec.s, "n": spec.n, "method": spec.method,
            "K": spec.k_effective, "a": float(a),
            "coverage": cov, "cov_se": math.sqrt(cov * (1 - cov) / ok),
            "avg_length": float(lengths.mean()), "len_se": len_se,
            "level": lvl, "level_se": math.sqrt(lvl * (1 - lvl) / ok),
            "n_mc": spec.n_mc, "failures": failures,
        })
    return ExperimentResult(spec, rows, failures, time.perf_counter() - t_start)


def write_outputs(result: ExperimentResult, csv_path, manifest_path=None) -> None:
    Path(csv_path).write_text(result.to_csv())
    if manifest_path is not None:
        Path(manifest_path).write_text(json.dumps(result.manifest(), indent=2, sort_keys=True) + "\n")


def dump_datasets(spec: ExperimentSpec, directory) -> None:
    """Write each replication's dataset as ``data_{r}.csv`` for external nuisance fitting."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for r in range(spec.n_mc):
        data = draw_dataset(DgpConfig(spec.s, spec.n), _rng(spec.base_seed, r))
        cols = np.column_stack([data.Y, data.A, data.L])
        header = "y,a," + ",".join(f"l{j + 1}" for j in range(data.d))
        np.savetxt(directory / f"data_{r}.csv", cols, delimiter=",", header=header,
                   comments="", fmt="%.17g")
