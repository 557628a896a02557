"""Monte Carlo for the pivotal limit law D_beta and its critical values.

One draw isotonizes the discretized derivative of two-sided Brownian motion
plus the drift |t|**(beta + 1) on [-half_width, half_width], refits with the
value pinned to 0 on the grid cell starting at the origin, and returns
``step * sum(full**2 - null**2)``.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import QuantileUnavailable
from .isotonic import _constrained_into, _isotonic_into

log = logging.getLogger(__name__)

LEVELS = (0.85, 0.90, 0.95, 0.975, 0.99)
BETAS = (0.01, 0.2, 0.4, 0.6, 0.8, 1.0, 2.0, 5.0)

# Published quantiles of D_beta; rows are quantile levels, columns BETAS.
_TABLE_ROWS = {
    0.99: (2.85, 3.06, 3.34, 3.56, 3.75, 3.89, 4.19, 4.45),
    0.975: (2.17, 2.33, 2.55, 2.73, 2.86, 2.92, 3.16, 3.35),
    0.95: (1.65, 1.81, 1.98, 2.10, 2.18, 2.25, 2.44, 2.57),
    0.90: (1.17, 1.29, 1.40, 1.49, 1.55, 1.60, 1.73, 1.83),
    0.85: (0.90, 0.99, 1.09, 1.15, 1.20, 1.24, 1.33, 1.40),
}
CRITICAL_VALUES: dict[tuple[float, float], float] = {
    (level, beta): q
    for level, row in _TABLE_ROWS.items()
    for beta, q in zip(BETAS, row)
}

POLICIES = ("table", "simulate", "table_then_simulate")


def _check_table() -> None:
    for beta in BETAS:
        col = [CRITICAL_VALUES[lv, beta] for lv in LEVELS]
        assert all(x < y for x, y in zip(col, col[1:])), beta
    for lv in LEVELS:
        row = [CRITICAL_VALUES[lv, b] for b in BETAS]
        assert all(x <= y for x, y in zip(row, row[1:])), lv


_check_table()


@dataclass(frozen=True)
class LimitSimConfig:
    beta: float = 1.0
    half_width: float = 5.0
    grid_step: float = 0.005
    n_mc: int = 10_000
    seed: int = 20240101
    brownian_only: bool = False  # the "beta = infinity" case: no drift

    def __post_init__(self):
        if not (self.beta > 0 and self.half_width > 0 and self.grid_step > 0):
            raise ValueError("beta, half_width and grid_step must be positive")
        if self.n_mc < 1:
            raise ValueError("n_mc must be positive")

    @property
    def m(self) -> int:
        """Grid cells on each side of the origin."""
        return int(round(self.half_width / self.grid_step))

    def grid(self) -> np.ndarray:
        return np.arange(-self.m, self.m + 1) * self.grid_step


@dataclass(frozen=True)
class DbetaQuantiles:
    beta: float
    draws: np.ndarray  # sorted
    k_fold: int = 1
    seed: int | None = None
    n_clamped: int = field(default=0, compare=False)

    @property
    def n_mc(self) -> int:
        return self.draws.size

    def quantile(self, level: float) -> float:
        return float(np.quantile(self.draws, level))

    def quantile_se(self, level: float) -> float:
        """Half-width of the +-1 binomial-sd band of order statistics."""
        d = math.sqrt(level * (1 - level) / self.n_mc)
        lo, hi = np.quantile(self.draws, [max(level - d, 0.0), min(level + d, 1.0)])
        return float(hi - lo) / 2

    def tail_probability(self, x: float) -> float:
        return float(np.mean(self.draws >= x))


@njit(cache=True, nogil=True)
def _draw_from_normals(z, m, step, beta, drift):
    """One D_beta draw from 2m standard normals (right half, then left)."""
    n = 2 * m
    sd = math.sqrt(step)
    # cusum of y = (M(x_i) - M(x_0)) / step, with M on grid x_i = (i - m) step
    mvals = np.empty(n + 1)
    mvals[m] = 0.0
    w = 0.0
    for i in range(m):
        w += sd * z[i]
        mvals[m + 1 + i] = w
    w = 0.0
    for i in range(m):
        w += sd * z[m + i]
        mvals[m - 1 - i] = w
    if drift:
        for i in range(n + 1):
            mvals[i] += abs((i - m) * step) ** (beta + 1.0)
    csum = np.empty(n + 1)
    for i in range(n + 1):
        csum[i] = (mvals[i] - mvals[0]) / step
    starts = np.empty(n, np.int64)
    ends = np.empty(n, np.int64)
    levels = np.empty(n)
    full = np.empty(n)
    null = np.empty(n)
    _isotonic_into(csum, n, full, starts, ends, levels)
    _constrained_into(csum, n, m, 0.0, null, starts, ends, levels)
    stat = 0.0
    check = 0.0
    for i in range(n):
        y = csum[i + 1] - csum[i]
        stat += full[i] * full[i] - null[i] * null[i]
        check += (y - null[i]) ** 2 - (y - full[i]) ** 2
    return stat * step, check * step


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def simulate_dbeta_draw(config: LimitSimConfig, rng: np.random.Generator) -> float:
    """One draw of D_beta (clamped at 0)."""
    z = rng.standard_normal(2 * config.m)
    stat, _ = _draw_from_normals(
        z, config.m, config.grid_step, config.beta, not config.brownian_only
    )
    return max(stat, 0.0)


def _draw_chunk(config: LimitSimConfig, k_fold: int, js: range):
    out = np.empty(len(js))
    clamped = 0
    worst = 0.0
    m, step = config.m, config.grid_step
    for pos, j in enumerate(js):
        total = 0.0
        for k in range(k_fold):
            key = (j,) if k_fold == 1 else (j, k)
            z = _rng(config.seed, *key).standard_normal(2 * m)
            stat, check = _draw_from_normals(z, m, step, config.beta, not config.brownian_only)
            worst = max(worst, abs(stat - check) / (1.0 + abs(check)))
            if stat < 0.0:
                clamped += 1
                stat = 0.0
            total += stat
        out[pos] = total / k_fold
    return out, clamped, worst


def simulate_draws(config: LimitSimConfig, k_fold: int = 1, threads: int = 1) -> DbetaQuantiles:
    """``config.n_mc`` draws of the K-fold average of independent D_beta's.

    Draw j (sub-draw k) uses the substream keyed by (seed, j) for K = 1 and
    (seed, j, k) otherwise, so the result does not depend on ``threads``.
    """
    if k_fold < 1:
        raise ValueError("k_fold must be >= 1")
    n = config.n_mc
    threads = max(1, int(threads))
    bounds = np.linspace(0, n, min(threads * 4, n) + 1).astype(int)
    chunks = [range(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
    if threads == 1:
        parts = [_draw_chunk(config, k_fold, js) for js in chunks]
    else:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda js: _draw_chunk(config, k_fold, js), chunks))
    draws = np.concatenate([p[0] for p in parts])
    clamped = sum(p[1] for p in parts)
    worst = max(p[2] for p in parts)
    if clamped > 0.01 * n * k_fold:
        log.warning("%d of %d draws clamped at zero; grid may be too coarse",
                    clamped, n * k_fold)
    if worst > 1e-6:
        log.warning("residual-form cross-check off by %.3g (relative)", worst)
    draws.sort()
    return DbetaQuantiles(config.beta, draws, k_fold, config.seed, clamped)


def quantiles(beta: float, config: LimitSimConfig | None = None, threads: int = 1) -> DbetaQuantiles:
    config = _with_beta(config, beta)
    if config.n_mc < 100:
        raise ValueError("n_mc must be at least 100")
    return _cached_draws(config, 1, threads)


def crossfit_reference(beta: float, k_fold: int, config: LimitSimConfig | None = None,
                       threads: int = 1) -> DbetaQuantiles:
    """Reference law of the average of ``k_fold`` independent D_beta's."""
    return _cached_draws(_with_beta(config, beta), k_fold, threads)


def _with_beta(config, beta):
    if config is None:
        return LimitSimConfig(beta=float(beta))
    if config.beta != beta:
        return LimitSimConfig(float(beta), config.half_width, config.grid_step,
                              config.n_mc, config.seed, config.brownian_only)
    return config


_CACHE: dict[tuple[LimitSimConfig, int], DbetaQuantiles] = {}


def _cached_draws(config: LimitSimConfig, k_fold: int, threads: int) -> DbetaQuantiles:
    # threads never changes the draws, so it stays out of the key
    key = (config, k_fold)
    if key not in _CACHE:
        _CACHE[key] = simulate_draws(config, k_fold, threads)
    return _CACHE[key]


def table_q(level: float, beta: float) -> float:
    """Published critical value, linearly interpolated in beta."""
    level = _match_level(level)
    if level is None:
        raise QuantileUnavailable("quantile level not tabulated")
    b = min(max(float(beta), BETAS[0]), BETAS[-1])
    i = int(np.searchsorted(BETAS, b))
    if BETAS[i] == b:
        return CRITICAL_VALUES[level, BETAS[i]]
    b0, b1 = BETAS[i - 1], BETAS[i]
    q0, q1 = CRITICAL_VALUES[level, b0], CRITICAL_VALUES[level, b1]
    return q0 + (q1 - q0) * (b - b0) / (b1 - b0)


def _match_level(level):
    for lv in LEVELS:
        if abs(level - lv) < 1e-9:
            return lv
    return None


def lookup_q(level: float, beta: float, policy: str = "table",
             config: LimitSimConfig | None = None, threads: int = 1) -> float:
    """The ``level`` quantile of D_beta (e.g. ``level=0.95`` for a 5% test)."""
    if policy not in POLICIES:
        raise ValueError(f"unknown quantile policy {policy!r}")
    if policy != "simulate" and _match_level(level) is not None:
        return table_q(level, beta)
    if policy == "table":
        raise QuantileUnavailable(
            f"level {level} not tabulated; tabulated levels are {LEVELS}"
        )
    return quantiles(beta, config, threads).quantile(level)


def reference_quantile(level: float, beta: float, k_fold: int = 1, policy: str = "table",
                       config: LimitSimConfig | None = None, threads: int = 1) -> float:
    """Critical value for the single-fit (K=1) or K-fold averaged statistic."""
    if k_fold == 1:
        return lookup_q(level, beta, policy, config, threads)
    if policy == "table":
        raise QuantileUnavailable("K-fold reference quantiles are not tabulated")
    return crossfit_reference(beta, k_fold, config, threads).quantile(level)
