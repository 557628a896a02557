"""Slow but obviously-correct reference implementations used by the tests."""

from __future__ import annotations

import numpy as np


def maxmin_fit(xi) -> np.ndarray:
    """O(n^3): theta_i = max_{k<=i} min_{j>=i} mean(xi[k..j])."""
    xi = np.asarray(xi, dtype=float)
    n = xi.size
    csum = np.concatenate([[0.0], np.cumsum(xi)])
    k = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        means = (csum[j + 1] - csum[k]) / (j + 1 - k)  # means[k, j], valid for k <= j
    out = np.empty(n)
    for i in range(n):
        out[i] = means[: i + 1, i:].min(axis=1).max()
    return out


def shifted_value(xi, k0: int, shift: float) -> float:
    """O(n^2): max_{k<=k0} min_{j>=k0} (sum xi[k..j] + shift) / (j - k + 1)."""
    xi = np.asarray(xi, dtype=float)
    n = xi.size
    csum = np.concatenate([[0.0], np.cumsum(xi)])
    best = -np.inf
    for k in range(k0 + 1):
        worst = min((csum[j + 1] - csum[k] + shift) / (j + 1 - k) for j in range(k0, n))
        best = max(best, worst)
    return best


def lattice_constrained_sse(xi, k0: int, t0: float, step: float = 1e-3) -> float:
    """Minimum SSE over nondecreasing sequences on a lattice with theta[k0] = t0.

    Dynamic programme over positions; the lattice covers
    [min(xi, t0) - 1, max(xi, t0) + 1] and always contains t0 exactly.
    """
    xi = np.asarray(xi, dtype=float)
    lo = min(xi.min(), t0) - 1.0
    hi = max(xi.max(), t0) + 1.0
    below = t0 - step * np.arange(int(np.ceil((t0 - lo) / step)), 0, -1)
    above = t0 + step * np.arange(1, int(np.ceil((hi - t0) / step)) + 1)
    grid = np.concatenate([below, [t0], above])
    pin = below.size
    best = np.zeros(grid.size)  # min cost of a prefix ending at each lattice value
    for i, x in enumerate(xi):
        prefix = np.minimum.accumulate(best)
        cost = prefix + (x - grid) ** 2
        if i == k0:
            cost = np.where(np.arange(grid.size) == pin, cost, np.inf)
        best = cost
    return float(best.min())


def rice(y) -> float:
    d = np.diff(np.asarray(y, dtype=float))
    return float(np.sum(d * d) / (2 * (len(y) - 1)))
