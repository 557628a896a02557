"""Likelihood-ratio test and confidence interval for a monotone curve at a point."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import limit
from .errors import EmptyKernelMass, IdentityViolation, TooFewPoints
from .isotonic import (
    ConstrainedFit,
    IsotonicFit,
    SortedSample,
    StepFunction,
    constrained_fit,
    pava,
    sort_sample,
    to_step_function,
)
from .nuisance import Dataset, IdentityNuisance
from .pseudo import compute as compute_pseudo

log = logging.getLogger(__name__)

KAPPA_FLOOR = 1e-12
DIRECTIONS = ("increasing", "decreasing")

RESULT_KEYS = (
    "a0", "t0", "alpha", "beta_bound", "s_n", "kappa_hat", "q_crit", "reject",
    "lambda_hat", "ci_lower", "ci_upper", "mode", "n", "bandwidth", "seed",
)


@dataclass(frozen=True)
class VarianceEstimate:
    kappa_hat: float
    bandwidth: float | None  # None for the difference-based estimator
    n_effective: float


@dataclass
class LrtResult:
    a0: float
    t0: float
    alpha: float
    beta_bound: float
    s_n: float
    kappa_hat: float
    q_crit: float
    reject: bool
    lambda_hat: float
    mode: str
    n: int
    bandwidth: float | None = None
    p_value: float | None = None
    p_value_se: float | None = None
    seed: int | None = None

    def to_dict(self) -> dict:
        out = dict.fromkeys(RESULT_KEYS)
        for k in RESULT_KEYS:
            if hasattr(self, k):
                out[k] = getattr(self, k)
        return out


@dataclass
class CiResult:
    lower: float
    upper: float
    a0: float
    alpha: float
    theta_hat_a0: float
    grid_points_scanned: int
    refined: bool
    unbounded_lower: bool = False
    unbounded_upper: bool = False
    kappa_hat: float | None = None
    q_crit: float | None = None
    beta_bound: float | None = None
    mode: str | None = None
    n: int | None = None
    bandwidth: float | None = None

    def contains(self, t: float) -> bool:
        return self.lower <= t <= self.upper

    @property
    def length(self) -> float:
        return self.upper - self.lower

    def to_dict(self) -> dict:
        out = dict.fromkeys(RESULT_KEYS)
        out.update(
            a0=self.a0, alpha=self.alpha, beta_bound=self.beta_bound,
            kappa_hat=self.kappa_hat, q_crit=self.q_crit, ci_lower=self.lower,
            ci_upper=self.upper, mode=self.mode, n=self.n, bandwidth=self.bandwidth,
        )
        return out


# --------------------------------------------------------------------------
# building blocks


def lrt_statistic(xi, full: IsotonicFit, null: ConstrainedFit, t0: float) -> float:
    """Residual sum of squares of the null fit minus that of the full fit.

    The same quantity is also computed as ``sum((full - t0)**2 - (null - t0)**2)``;
    disagreement beyond 1e-8 relative means one of the fits is wrong.
    """
    xi = np.asarray(xi, dtype=float)
    direct = float(np.sum((xi - null.values) ** 2) - np.sum((xi - full.values) ** 2))
    centred = float(np.sum((full.values - t0) ** 2 - (null.values - t0) ** 2))
    scale = 1.0 + abs(direct) + 1e-4 * float(np.sum((xi - t0) ** 2))
    if abs(direct - centred) > 1e-8 * scale:
        raise IdentityViolation(
            f"statistic forms disagree: {direct!r} vs {centred!r}"
        )
    return max(direct, 0.0)


def silverman_bandwidth(a) -> float:
    a = np.asarray(a, dtype=float)
    sd = float(np.std(a, ddof=1)) if a.size > 1 else 0.0
    if sd == 0.0:
        sd = 1.0
    return 1.06 * sd * a.size ** (-0.2)


def kernel_variance(a, eta, a0: float, bandwidth: float | None = None) -> VarianceEstimate:
    """Nadaraya-Watson (Gaussian kernel) smooth of ``eta`` evaluated at ``a0``."""
    a = np.asarray(a, dtype=float)
    eta = np.asarray(eta, dtype=float)
    h = silverman_bandwidth(a) if bandwidth is None else float(bandwidth)
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    w = np.exp(-0.5 * ((a - a0) / h) ** 2)
    mass = float(w.sum())
    if mass == 0.0 or not np.isfinite(mass):
        raise EmptyKernelMass(f"no kernel weight at a0={a0} (bandwidth {h:.3g})")
    k = float(w @ eta) / mass
    if k < KAPPA_FLOOR:
        log.warning("variance estimate %.3g floored at %g", k, KAPPA_FLOOR)
        k = KAPPA_FLOOR
    return VarianceEstimate(k, h, mass ** 2 / float(w @ w))


def kappa_hat(a, xi, full_fit: StepFunction, a0: float, bandwidth: float | None = None) -> VarianceEstimate:
    """Scale of the limit law, from squared residuals ``(xi_i - fit(A_i))**2``.

    ``xi`` are pseudo-outcomes, so the residual is the doubly robust one
    ``(Y - mu)/g + mbar - fit``; with identity nuisances it is ``Y - fit``.
    """
    a = np.asarray(a, dtype=float)
    eta = (np.asarray(xi, dtype=float) - full_fit(a)) ** 2
    return kernel_variance(a, eta, a0, bandwidth)


def noncausal_sigma2(y_sorted) -> float:
    """First-difference noise variance of responses ordered by treatment."""
    y = np.asarray(y_sorted, dtype=float)
    if y.size < 2:
        raise TooFewPoints("difference-based variance needs n >= 2")
    d = np.diff(y)
    return float(d @ d) / (2 * (y.size - 1))


# --------------------------------------------------------------------------
# the per-point problem


@dataclass
class LrtProblem:
    """Everything about a test at ``a0`` that does not depend on ``t0``.

    Responses are stored on the working (nondecreasing) scale; ``sign`` is -1
    when the caller's curve is nonincreasing and everything was negated.
    """

    sample: SortedSample
    full: IsotonicFit
    variance: VarianceEstimate
    mode: str = "causal"
    sign: float = 1.0

    @property
    def n(self) -> int:
        return self.sample.n

    @property
    def k0(self) -> int:
        return self.sample.k0

    @property
    def theta_hat(self) -> float:
        """Full fit at the constraint index, on the working scale."""
        return float(self.full.values[self.k0])

    @property
    def kappa(self) -> float:
        return self.variance.kappa_hat

    def fit_null(self, t_work: float) -> ConstrainedFit:
        return constrained_fit(self.sample.xi, self.k0, t_work, self.full)

    def statistic(self, t_work: float) -> tuple[float, ConstrainedFit]:
        null = self.fit_null(t_work)
        return lrt_statistic(self.sample.xi, self.full, null, t_work), null


def prepare(a, xi, a0: float, *, variance: str = "kernel", bandwidth: float | None = None,
            direction: str = "increasing", mode: str = "causal",
            full: IsotonicFit | None = None) -> LrtProblem:
    """Sort, fit, and estimate the scale for pseudo-outcomes ``xi`` observed at ``a``."""
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    sign = 1.0 if direction == "increasing" else -1.0
    sample = sort_sample(a, sign * np.asarray(xi, dtype=float), a0)
    if full is None:
        full = pava(sample.xi)
    if variance == "kernel":
        var = kappa_hat(sample.a, sample.xi, to_step_function(full.values, sample.a),
                        a0, bandwidth)
    elif variance == "rice":
        var = VarianceEstimate(max(noncausal_sigma2(sample.xi), KAPPA_FLOOR), None,
                               float(sample.n))
    else:
        raise ValueError(f"unknown variance estimator {variance!r}")
    return LrtProblem(sample, full, var, mode, sign)


def prepare_from_data(data: Dataset, model, a0: float, **kw) -> LrtProblem:
    xi = compute_pseudo(data, model).xi
    kw.setdefault("mode", "noncausal" if isinstance(model, IdentityNuisance) else "causal")
    return prepare(data.A, xi, a0, **kw)


def critical_value(alpha: float, beta_bound: float, policy: str = "table",
                   config: limit.LimitSimConfig | None = None, k_fold: int = 1,
                   threads: int = 1) -> float:
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    return limit.reference_quantile(1 - alpha, beta_bound, k_fold, policy, config, threads)


def lr_test(problem: LrtProblem, t0: float, alpha: float = 0.10, beta_bound: float = 5.0,
            policy: str = "table", q_crit: float | None = None,
            reference: limit.DbetaQuantiles | None = None, seed: int | None = None) -> LrtResult:
    """Reject when the statistic exceeds ``kappa_hat * q`` with q the 1 - alpha quantile."""
    if q_crit is None:
        q_crit = critical_value(alpha, beta_bound, policy)
    s_n, null = problem.statistic(problem.sign * t0)
    kappa = problem.kappa
    p_value = p_se = None
    if reference is not None:
        p_value = reference.tail_probability(s_n / kappa)
        p_se = math.sqrt(p_value * (1 - p_value) / reference.n_mc)
    return LrtResult(
        a0=problem.sample.a0, t0=float(t0), alpha=alpha, beta_bound=beta_bound,
        s_n=s_n, kappa_hat=kappa, q_crit=q_crit, reject=bool(s_n > kappa * q_crit),
        lambda_hat=null.lambda_hat, mode=problem.mode, n=problem.n,
        bandwidth=problem.variance.bandwidth, p_value=p_value, p_value_se=p_se, seed=seed,
    )


# --------------------------------------------------------------------------
# test inversion


@dataclass(frozen=True)
class GridConfig:
    points: int = 201
    max_doublings: int = 8
    rel_tol: float = 1e-4


@dataclass
class _Inversion:
    lower: float
    upper: float
    scanned: int
    refined: bool
    unbounded_lower: bool
    unbounded_upper: bool


def invert_test(accept: Callable[[float], bool], center: float, radius: float,
                grid: GridConfig = GridConfig()) -> _Inversion:
    """Endpoints of ``{t : accept(t)}`` around an accepted ``center``.

    The statistic is convex in the constrained value (the null fit's residual
    sum of squares is a partial minimum of a jointly convex objective), so the
    accept set is an interval; a non-contiguous pattern on the grid still
    falls back to raw grid endpoints with ``refined=False``.
    """
    radius = float(radius)
    if not radius > 0:
        radius = 1.0
    scanned = 0
    for attempt in range(grid.max_doublings + 1):
        ts = center + radius * np.linspace(-1.0, 1.0, grid.points)
        acc = np.array([accept(t) for t in ts])
        scanned += ts.size
        if not acc[0] and not acc[-1]:
            break
        if attempt < grid.max_doublings:
            radius *= 2
    idx = np.flatnonzero(acc)
    if idx.size == 0:
        return _Inversion(math.nan, math.nan, scanned, False, False, False)
    lo_i, hi_i = int(idx[0]), int(idx[-1])
    unb_lo, unb_hi = lo_i == 0, hi_i == ts.size - 1
    if hi_i - lo_i + 1 != idx.size:
        log.warning("non-contiguous acceptance pattern; using grid endpoints")
        return _Inversion(-math.inf if unb_lo else ts[lo_i], math.inf if unb_hi else ts[hi_i],
                          scanned, False, unb_lo, unb_hi)
    tol = grid.rel_tol * radius

    def refine(inside, outside):
        while abs(outside - inside) > tol:
            mid = 0.5 * (inside + outside)
            if accept(mid):
                inside = mid
            else:
                outside = mid
        return 0.5 * (inside + outside)

    lower = -math.inf if unb_lo else refine(ts[lo_i], ts[lo_i - 1])
    upper = math.inf if unb_hi else refine(ts[hi_i], ts[hi_i + 1])
    return _Inversion(float(lower), float(upper), scanned, True, unb_lo, unb_hi)


def default_radius(kappa: float, xi, n: int, beta_bound: float) -> float:
    xi = np.asarray(xi)
    rate = n ** (-beta_bound / (2 * beta_bound + 1))
    return max(4 * math.sqrt(kappa) * rate, float(xi.max() - xi.min()) / 4)


def confidence_interval(problem: LrtProblem, alpha: float = 0.10, beta_bound: float = 5.0,
                        policy: str = "table", q_crit: float | None = None,
                        grid: GridConfig = GridConfig()) -> CiResult:
    """All ``t0`` the level-alpha test accepts, by grid scan plus bisection."""
    if q_crit is None:
        q_crit = critical_value(alpha, beta_bound, policy)
    threshold = problem.kappa * q_crit

    def accept(t):
        return problem.statistic(t)[0] <= threshold

    center = problem.theta_hat
    radius = default_radius(problem.kappa, problem.sample.xi, problem.n, beta_bound)
    inv = invert_test(accept, center, radius, grid)
    lower, upper = inv.lower, inv.upper
    unb_lo, unb_hi = inv.unbounded_lower, inv.unbounded_upper
    if problem.sign < 0:
        lower, upper = -upper, -lower
        unb_lo, unb_hi = unb_hi, unb_lo
    return CiResult(
        lower=lower, upper=upper, a0=problem.sample.a0, alpha=alpha,
        theta_hat_a0=problem.sign * center, grid_points_scanned=inv.scanned,
        refined=inv.refined, unbounded_lower=unb_lo, unbounded_upper=unb_hi,
        kappa_hat=problem.kappa, q_crit=q_crit, beta_bound=beta_bound,
        mode=problem.mode, n=problem.n, bandwidth=problem.variance.bandwidth,
    )
