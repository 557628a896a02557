"""Unconstrained and point-constrained isotonic least squares.

All indices are 0-based. Block levels are always computed from one shared
cumulative-sum array, ``(csum[end] - csum[start]) / (end - start)``, so a
block that appears in two different fits of the same data has bitwise
identical level in both.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import (
    BracketFailure,
    EmptyInput,
    IndexOutOfRange,
    LengthMismatch,
    QueryBelowSupport,
    SchemaMismatch,
)

__all__ = [
    "SortedSample",
    "IsotonicFit",
    "ConstrainedFit",
    "StepFunction",
    "sort_sample",
    "pava",
    "maxmin_at",
    "solve_lambda",
    "constrained_fit",
    "to_step_function",
]


# --------------------------------------------------------------------------
# compiled kernels


@njit(cache=True, nogil=True)
def _pava_range(csum, lo, hi, starts, ends, levels):
    """Pool adjacent violators over xi[lo:hi]; returns the block count."""
    nb = 0
    for i in range(lo, hi):
        starts[nb] = i
        ends[nb] = i + 1
        levels[nb] = csum[i + 1] - csum[i]
        nb += 1
        while nb > 1 and levels[nb - 2] >= levels[nb - 1]:
            s = starts[nb - 2]
            e = ends[nb - 1]
            ends[nb - 2] = e
            levels[nb - 2] = (csum[e] - csum[s]) / (e - s)
            nb -= 1
    return nb


@njit(cache=True, nogil=True)
def _fill(starts, ends, levels, nb, out):
    for b in range(nb):
        for i in range(starts[b], ends[b]):
            out[i] = levels[b]


@njit(cache=True, nogil=True)
def _isotonic_into(csum, n, out, starts, ends, levels):
    nb = _pava_range(csum, 0, n, starts, ends, levels)
    _fill(starts, ends, levels, nb, out)
    return nb


@njit(cache=True, nogil=True)
def _constrained_into(csum, n, k0, t0, out, starts, ends, levels):
    """Isotonic fit pinned at out[k0] == t0; returns the multiplier shift.

    With the value at k0 fixed the problem splits into a left chain bounded
    above by t0 and a right chain bounded below by t0, and the bounded chain
    problems are solved by clipping the unconstrained chain fits. The shift
    added to xi[k0] that reproduces this fit as a plain isotonic fit follows
    from the mean identity on the block pinned at t0.
    """
    nb = _pava_range(csum, 0, k0, starts, ends, levels)
    _fill(starts, ends, levels, nb, out)
    for i in range(k0):
        if out[i] > t0:
            out[i] = t0
    out[k0] = t0
    nb = _pava_range(csum, k0 + 1, n, starts, ends, levels)
    _fill(starts, ends, levels, nb, out)
    for i in range(k0 + 1, n):
        if out[i] < t0:
            out[i] = t0
    lo = k0
    while lo > 0 and out[lo - 1] == t0:
        lo -= 1
    hi = k0 + 1
    while hi < n and out[hi] == t0:
        hi += 1
    return (hi - lo) * t0 - (csum[hi] - csum[lo])


@njit(cache=True, nogil=True)
def _value_at(csum, n, k, shift, starts, ends, levels):
    """Fitted value at k of the isotonic fit of xi + shift * e_k."""
    # The shifted cusum differs from csum by `shift` on indices > k.
    nb = 0
    for i in range(n):
        c0 = csum[i] + (shift if i > k else 0.0)
        c1 = csum[i + 1] + (shift if i + 1 > k else 0.0)
        starts[nb] = i
        ends[nb] = i + 1
        levels[nb] = c1 - c0
        nb += 1
        while nb > 1 and levels[nb - 2] >= levels[nb - 1]:
            s = starts[nb - 2]
            e = ends[nb - 1]
            cs = csum[s] + (shift if s > k else 0.0)
            ce = csum[e] + (shift if e > k else 0.0)
            ends[nb - 2] = e
            levels[nb - 2] = (ce - cs) / (e - s)
            nb -= 1
    for b in range(nb):
        if starts[b] <= k < ends[b]:
            return levels[b]
    return np.nan


def _cusum(xi: np.ndarray) -> np.ndarray:
    csum = np.empty(xi.size + 1)
    csum[0] = 0.0
    np.cumsum(xi, out=csum[1:])
    return csum


def _workspace(n: int):
    return np.empty(n, np.int64), np.empty(n, np.int64), np.empty(n)


def _as_vector(xi) -> np.ndarray:
    xi = np.ascontiguousarray(xi, dtype=float)
    if xi.ndim != 1:
        raise LengthMismatch("expected a one-dimensional vector")
    if xi.size == 0:
        raise EmptyInput("isotonic fit needs at least one value")
    if not np.all(np.isfinite(xi)):
        raise SchemaMismatch("isotonic fit needs finite values")
    return xi


def _check_index(k0: int, n: int) -> int:
    k0 = int(k0)
    if not 0 <= k0 < n:
        raise IndexOutOfRange(f"constraint index {k0} outside [0, {n - 1}]")
    return k0


# --------------------------------------------------------------------------
# data types


@dataclass(frozen=True)
class SortedSample:
    """Observations ordered by treatment, with the constraint index resolved.

    ``perm[i]`` is the input row of the i-th order statistic and ``k0`` the
    last index with ``a[k0] <= a0``.
    """

    a: np.ndarray
    xi: np.ndarray
    perm: np.ndarray
    a0: float
    k0: int

    @property
    def n(self) -> int:
        return self.a.size


@dataclass(frozen=True)
class IsotonicFit:
    values: np.ndarray
    blocks: list[tuple[int, int, float]]  # (start, stop) half-open, level
    sse: float


@dataclass(frozen=True)
class ConstrainedFit:
    values: np.ndarray
    lambda_hat: float
    t0: float
    k0: int
    active: bool

    @property
    def shift(self) -> float:
        """Amount added to xi[k0] in the equivalent unconstrained problem."""
        return self.lambda_hat * self.values.size


@dataclass(frozen=True)
class StepFunction:
    """Piecewise-constant extension of a fit over the sorted treatments.

    Evaluates to the level at the largest knot ``<= a``; queries below the
    first knot get the first level.
    """

    knots: np.ndarray
    levels: np.ndarray

    def __call__(self, a):
        a = np.asarray(a, dtype=float)
        idx = np.searchsorted(self.knots, a, side="right") - 1
        out = self.levels[np.clip(idx, 0, None)]
        return out if out.ndim else float(out)


# --------------------------------------------------------------------------
# operations


def sort_sample(a, xi, a0: float) -> SortedSample:
    a = np.asarray(a, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if a.ndim != 1 or a.shape != xi.shape:
        raise LengthMismatch(f"a has shape {a.shape} but xi has {xi.shape}")
    if a.size < 2:
        raise LengthMismatch("need at least two observations")
    perm = np.argsort(a, kind="stable")
    a_sorted = a[perm]
    if a0 < a_sorted[0]:
        raise QueryBelowSupport(
            f"a0={a0} lies below the smallest treatment {a_sorted[0]}"
        )
    k0 = int(np.searchsorted(a_sorted, a0, side="right")) - 1
    return SortedSample(a_sorted, xi[perm], perm, float(a0), k0)


def _blocks_from(starts, ends, levels, nb):
    return [(int(starts[b]), int(ends[b]), float(levels[b])) for b in range(nb)]


def pava(xi) -> IsotonicFit:
    """Least-squares nondecreasing fit with unit weights, O(n)."""
    xi = _as_vector(xi)
    n = xi.size
    csum = _cusum(xi)
    starts, ends, levels = _workspace(n)
    values = np.empty(n)
    nb = _isotonic_into(csum, n, values, starts, ends, levels)
    sse = float(np.sum((xi - values) ** 2))
    return IsotonicFit(values, _blocks_from(starts, ends, levels, nb), sse)


def maxmin_at(xi, k0: int, shift: float) -> float:
    """Fitted value at ``k0`` after adding ``shift`` to ``xi[k0]``.

    This is max over k <= k0 of min over i >= k0 of the shifted block mean
    of xi[k..i]; every such block contains k0, so the shift enters once.
    """
    xi = _as_vector(xi)
    k0 = _check_index(k0, xi.size)
    starts, ends, levels = _workspace(xi.size)
    return float(_value_at(_cusum(xi), xi.size, k0, float(shift), starts, ends, levels))


def solve_lambda(xi, k0: int, t0: float, max_doublings: int = 200) -> float:
    """Multiplier at which the shifted fit passes through ``t0`` at ``k0``.

    The fitted value at k0 is continuous and strictly increasing in the
    multiplier with slope at least 1, so plain bisection is safe.
    """
    xi = _as_vector(xi)
    n = xi.size
    k0 = _check_index(k0, n)
    t0 = float(t0)
    csum = _cusum(xi)
    ws = _workspace(n)

    def phi(lam):
        return _value_at(csum, n, k0, n * lam, *ws)

    bound = abs(t0) + float(np.max(np.abs(xi)))
    if not np.isfinite(bound):
        raise BracketFailure("non-finite input")
    lo, hi = -max(bound, 1.0), max(bound, 1.0)
    for _ in range(max_doublings):
        if phi(lo) <= t0 <= phi(hi):
            break
        lo, hi = 2 * lo, 2 * hi
    else:
        raise BracketFailure(f"no bracket for t0={t0} after {max_doublings} doublings")

    tol_f = 1e-10 * (1 + abs(t0))
    while True:
        mid = 0.5 * (lo + hi)
        f = phi(mid)
        if abs(f - t0) <= tol_f or hi - lo <= 1e-12 * (1 + abs(mid)):
            return mid
        if f < t0:
            lo = mid
        else:
            hi = mid


def constrained_fit(xi, k0: int, t0: float, full: IsotonicFit | None = None) -> ConstrainedFit:
    """Nondecreasing least-squares fit subject to ``values[k0] == t0``.

    If the unconstrained fit already passes through ``t0`` it is returned
    unchanged with a zero multiplier.
    """
    xi = _as_vector(xi)
    n = xi.size
    k0 = _check_index(k0, n)
    t0 = float(t0)
    if full is None:
        full = pava(xi)
    v = full.values[k0]
    if abs(v - t0) <= 1e-12 * max(abs(v), abs(t0), 1e-300):
        # move the whole block containing k0 so the fit stays monotone
        values = full.values.copy()
        values[values == v] = t0
        return ConstrainedFit(values, 0.0, t0, k0, False)
    values = np.empty(n)
    shift = _constrained_into(_cusum(xi), n, k0, t0, values, *_workspace(n))
    return ConstrainedFit(values, float(shift) / n, t0, k0, True)


def to_step_function(values, a) -> StepFunction:
    values = np.asarray(values, dtype=float)
    a = np.asarray(a, dtype=float)
    if values.shape != a.shape:
        raise LengthMismatch(f"{values.shape} fit values for {a.shape} knots")
    return StepFunction(a, values)
