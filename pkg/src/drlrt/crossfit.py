"""K-fold cross-fitted version of the test and interval.

Nuisances for fold k are trained on the other folds; pseudo-outcomes, the
isotonic fits, the statistic and the scale estimate for fold k use only the
fold's own rows. The fold statistics and scales are averaged and compared
with the matching quantile of the average of K independent D_beta's.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import limit
from .errors import FoldQueryBelowSupport, TooFewSamples
from .lrt import (
    DIRECTIONS,
    RESULT_KEYS,
    CiResult,
    GridConfig,
    LrtProblem,
    critical_value,
    default_radius,
    invert_test,
    prepare,
)
from .nuisance import DEFAULT_FLOOR, Dataset, fit_nuisance
from .pseudo import compute as compute_pseudo


@dataclass(frozen=True)
class FoldAssignment:
    K: int
    fold_of: np.ndarray  # values in 0..K-1
    seed: int | None

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == k)

    def sizes(self) -> list[int]:
        return np.bincount(self.fold_of, minlength=self.K).tolist()


def assign_folds(n: int, K: int, seed: int | None = None) -> FoldAssignment:
    """Uniformly random partition into K folds whose sizes differ by at most one."""
    if K < 2:
        raise TooFewSamples("cross-fitting needs K >= 2")
    if n < 2 * K:
        raise TooFewSamples(f"n={n} too small for {K} folds")
    order = np.random.default_rng(seed).permutation(n)
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[order] = np.arange(n) % K
    return FoldAssignment(K, fold_of, seed)


@dataclass(frozen=True)
class FoldStat:
    s_n: float
    kappa_hat: float
    lambda_hat: float
    n_k: int

    def to_dict(self) -> dict:
        return {"s_n": self.s_n, "kappa_hat": self.kappa_hat,
                "lambda_hat": self.lambda_hat, "n": self.n_k}


@dataclass
class CrossfitResult:
    s_bar: float
    kappa_bar: float
    per_fold: list[FoldStat]
    q_crit_K: float
    reject: bool
    a0: float
    t0: float
    alpha: float
    beta_bound: float
    n: int
    mode: str = "causal"
    seed: int | None = None
    bandwidth: float | None = None

    @property
    def K(self) -> int:
        return len(self.per_fold)

    def to_dict(self) -> dict:
        out = dict.fromkeys(RESULT_KEYS)
        out.update(
            a0=self.a0, t0=self.t0, alpha=self.alpha, beta_bound=self.beta_bound,
            s_n=self.s_bar, kappa_hat=self.kappa_bar, q_crit=self.q_crit_K,
            reject=self.reject, mode=self.mode, n=self.n, seed=self.seed,
            bandwidth=self.bandwidth,
        )
        out["K"] = self.K
        out["per_fold"] = [f.to_dict() for f in self.per_fold]
        return out


def _mean(values) -> float:
    # fixed summation order for determinism
    total = 0.0
    for v in values:
        total += v
    return total / len(values)


@dataclass
class CrossfitProblem:
    folds: FoldAssignment
    problems: list[LrtProblem]
    a0: float
    sign: float
    mode: str = "causal"
    seed: int | None = None
    _kappa_bar: float = field(init=False)

    def __post_init__(self):
        self._kappa_bar = _mean([p.kappa for p in self.problems])

    @property
    def K(self) -> int:
        return len(self.problems)

    @property
    def n(self) -> int:
        return sum(p.n for p in self.problems)

    @property
    def kappa_bar(self) -> float:
        return self._kappa_bar

    def fold_stats(self, t_work: float) -> list[FoldStat]:
        out = []
        for p in self.problems:
            s, null = p.statistic(t_work)
            out.append(FoldStat(s, p.kappa, null.lambda_hat, p.n))
        return out

    def s_bar(self, t_work: float) -> float:
        return _mean([p.statistic(t_work)[0] for p in self.problems])


NuisanceFactory = Callable[[Dataset, np.ndarray], object]


def parametric_factory(outcome_spec="well_specified_y", propensity_spec="well_specified_a",
                       sigma2: float | None = None,
                       truncation_floor: float = DEFAULT_FLOOR) -> NuisanceFactory:
    """Fit on the training rows; average over the given reference confounders."""
    def factory(train: Dataset, reference_L: np.ndarray):
        return fit_nuisance(train, outcome_spec, propensity_spec, sigma2,
                            reference_L, truncation_floor)
    return factory


def prepare_crossfit(data: Dataset, a0: float, K: int = 2, seed: int | None = None,
                     factory: NuisanceFactory | None = None, *,
                     direction: str = "increasing", bandwidth: float | None = None,
                     folds: FoldAssignment | None = None) -> CrossfitProblem:
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    if factory is None:
        factory = parametric_factory()
    if folds is None:
        folds = assign_folds(data.n, K, seed)
    problems = []
    for k in range(folds.K):
        inside = folds.members(k)
        outside = np.flatnonzero(folds.fold_of != k)
        fold = data.subset(inside)
        if fold.A.min() > a0:
            raise FoldQueryBelowSupport(
                f"fold {k}: smallest treatment {fold.A.min():.6g} exceeds a0={a0}"
            )
        model = factory(data.subset(outside), fold.L)
        xi = compute_pseudo(fold, model).xi
        problems.append(prepare(fold.A, xi, a0, bandwidth=bandwidth, direction=direction))
    sign = 1.0 if direction == "increasing" else -1.0
    return CrossfitProblem(folds, problems, float(a0), sign, seed=seed)


def crossfit_critical_value(alpha: float, beta_bound: float, K: int,
                            config: limit.LimitSimConfig | None = None,
                            threads: int = 1) -> float:
    return critical_value(alpha, beta_bound, "simulate", config, k_fold=K, threads=threads)


def crossfit_test(problem: CrossfitProblem, t0: float, alpha: float = 0.10,
                  beta_bound: float = 5.0, q_crit: float | None = None,
                  config: limit.LimitSimConfig | None = None, threads: int = 1) -> CrossfitResult:
    if q_crit is None:
        q_crit = crossfit_critical_value(alpha, beta_bound, problem.K, config, threads)
    stats = problem.fold_stats(problem.sign * t0)
    s_bar = _mean([f.s_n for f in stats])
    kappa_bar = problem.kappa_bar
    return CrossfitResult(
        s_bar=s_bar, kappa_bar=kappa_bar, per_fold=stats, q_crit_K=q_crit,
        reject=bool(s_bar > kappa_bar * q_crit), a0=problem.a0, t0=float(t0),
        alpha=alpha, beta_bound=beta_bound, n=problem.n, mode=problem.mode,
        seed=problem.seed,
    )


def _golden_min(f, lo, hi, tol):
    g = (math.sqrt(5) - 1) / 2
    c, d = hi - g * (hi - lo), lo + g * (hi - lo)
    fc, fd = f(c), f(d)
    while hi - lo > tol:
        if fc <= fd:
            hi, d, fd = d, c, fc
            c = hi - g * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + g * (hi - lo)
            fd = f(d)
    return 0.5 * (lo + hi)


def crossfit_ci(problem: CrossfitProblem, alpha: float = 0.10, beta_bound: float = 5.0,
                q_crit: float | None = None, config: limit.LimitSimConfig | None = None,
                grid: GridConfig = GridConfig(), threads: int = 1) -> CiResult:
    """Invert the cross-fitted test.

    The averaged statistic is convex in the constrained value with its
    minimum between the smallest and largest fold estimates, which is
    where the scan is centred.
    """
    if q_crit is None:
        q_crit = crossfit_critical_value(alpha, beta_bound, problem.K, config, threads)
    threshold = problem.kappa_bar * q_crit
    centers = [p.theta_hat for p in problem.problems]
    radius = max(default_radius(p.kappa, p.sample.xi, p.n, beta_bound) for p in problem.problems)
    lo, hi = min(centers), max(centers)
    center = lo if hi == lo else _golden_min(problem.s_bar, lo, hi, 1e-6 * radius)
    inv = invert_test(lambda t: problem.s_bar(t) <= threshold, center, radius, grid)
    lower, upper = inv.lower, inv.upper
    unb_lo, unb_hi = inv.unbounded_lower, inv.unbounded_upper
    if problem.sign < 0:
        lower, upper = -upper, -lower
        unb_lo, unb_hi = unb_hi, unb_lo
    return CiResult(
        lower=lower, upper=upper, a0=problem.a0, alpha=alpha,
        theta_hat_a0=problem.sign * center, grid_points_scanned=inv.scanned,
        refined=inv.refined, unbounded_lower=unb_lo, unbounded_upper=unb_hi,
        kappa_hat=problem.kappa_bar, q_crit=q_crit, beta_bound=beta_bound,
        mode=problem.mode, n=problem.n,
    )
