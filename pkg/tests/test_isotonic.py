import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from drlrt.errors import EmptyInput, IndexOutOfRange, LengthMismatch, QueryBelowSupport
from drlrt.isotonic import (
    constrained_fit,
    maxmin_at,
    pava,
    solve_lambda,
    sort_sample,
    to_step_function,
)

from oracles import lattice_constrained_sse, maxmin_fit, shifted_value

finite = st.floats(-100, 100, allow_nan=False, allow_infinity=False)
vectors = arrays(np.float64, st.integers(1, 30), elements=finite)


# --- sorting ---------------------------------------------------------------

def test_sort_sample_example():
    s = sort_sample([2, 1, 3], [20, 10, 30], 2.5)
    np.testing.assert_array_equal(s.a, [1, 2, 3])
    np.testing.assert_array_equal(s.xi, [10, 20, 30])
    np.testing.assert_array_equal(s.perm, [1, 0, 2])
    assert s.k0 == 1  # 0-based: the second sorted point


def test_sort_sample_boundary_and_below():
    assert sort_sample([1, 2], [0, 0], 1).k0 == 0
    with pytest.raises(QueryBelowSupport):
        sort_sample([1, 2], [0, 0], 0.5)


def test_sort_sample_ties_take_last_index():
    s = sort_sample([1, 1, 1, 2], [0, 1, 2, 3], 1.0)
    assert s.k0 == 2
    np.testing.assert_array_equal(s.xi, [0, 1, 2, 3])  # stable


def test_sort_sample_validation():
    with pytest.raises(LengthMismatch):
        sort_sample([1, 2], [1], 1)
    with pytest.raises(LengthMismatch):
        sort_sample([1.0], [1.0], 1)


# --- unconstrained fit -------------------------------------------------------

def test_pava_examples():
    np.testing.assert_array_equal(pava([1, 2, 3]).values, [1, 2, 3])
    np.testing.assert_array_equal(pava([3, 1]).values, [2, 2])


def test_pava_matches_maxmin_example():
    xi = [0.7, -1.2, 0.4, 0.4, 2.0, 1.1]
    np.testing.assert_allclose(pava(xi).values, maxmin_fit(xi), atol=1e-12)


def test_pava_blocks_cover_and_average():
    rng = np.random.default_rng(0)
    xi = rng.normal(size=40)
    fit = pava(xi)
    assert fit.blocks[0][0] == 0 and fit.blocks[-1][1] == 40
    for (s, e, level), (s2, _, _) in zip(fit.blocks, fit.blocks[1:] + [(40, 0, 0)]):
        assert e == s2
        assert level == pytest.approx(xi[s:e].mean(), abs=1e-12)
    levels = [b[2] for b in fit.blocks]
    assert all(x < y for x, y in zip(levels, levels[1:]))
    assert fit.sse == pytest.approx(np.sum((xi - fit.values) ** 2))


@settings(max_examples=200, deadline=None)
@given(vectors)
def test_pava_properties(xi):
    fit = pava(xi).values
    assert np.all(np.diff(fit) >= 0)
    assert fit.sum() == pytest.approx(xi.sum(), abs=1e-9 * (1 + np.abs(xi).sum()))
    # cusum of the data dominates the cusum of the fit
    gap = np.cumsum(xi - fit)
    assert np.all(gap >= -1e-9 * (1 + np.abs(xi).sum()))
    # idempotent, equivariant
    np.testing.assert_allclose(pava(fit).values, fit, atol=1e-9)
    np.testing.assert_allclose(pava(2 * xi + 3).values, 2 * fit + 3, atol=1e-8)


def test_pava_rejects_bad_input():
    with pytest.raises(EmptyInput):
        pava([])
    with pytest.raises(ValueError):
        pava([1.0, np.nan])


# --- constrained fit ---------------------------------------------------------

def test_maxmin_at_examples():
    assert maxmin_at([0, 0], 0, 2) == pytest.approx(1.0)
    assert maxmin_at([1, 2, 3], 1, 0) == pytest.approx(2.0)
    xi = np.array([0.3, -1, 2, 0.5])
    assert maxmin_at(xi, 2, 0.0) == pytest.approx(pava(xi).values[2])


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 15), elements=finite), st.data())
def test_maxmin_at_matches_quadratic_oracle(xi, data):
    k0 = data.draw(st.integers(0, xi.size - 1))
    shift = data.draw(finite)
    assert maxmin_at(xi, k0, shift) == pytest.approx(shifted_value(xi, k0, shift), abs=1e-9)


def test_constrained_examples():
    fit = constrained_fit([0, 0], 0, 1)
    np.testing.assert_allclose(fit.values, [1, 1])
    assert fit.lambda_hat == pytest.approx(1.0) and fit.shift == pytest.approx(2.0)

    fit = constrained_fit([1, 2, 3], 1, 2)
    np.testing.assert_array_equal(fit.values, [1, 2, 3])
    assert fit.lambda_hat == 0 and not fit.active

    fit = constrained_fit([5, 5], 0, 3)
    np.testing.assert_allclose(fit.values, [3, 5])
    assert fit.lambda_hat == pytest.approx(-1.0)  # shift -2 on xi[0]
    assert maxmin_at([5, 5], 0, fit.shift) == pytest.approx(3.0)


def test_constrained_index_check():
    with pytest.raises(IndexOutOfRange):
        constrained_fit([1, 2], 2, 0)


def _kkt_residual(xi, fit):
    """Largest violation of the isotonic optimality conditions for xi + shift e_k0."""
    y = np.array(xi, dtype=float)
    y[fit.k0] += fit.shift
    theta = fit.values
    gap = np.cumsum(y - theta)
    scale = 1 + np.abs(y).sum()
    worst = max(0.0, -gap.min())  # cusum dominance
    knots = np.flatnonzero(np.diff(theta) > 1e-12 * scale)
    ends = np.append(knots, y.size - 1)
    worst = max(worst, np.abs(gap[ends]).max())  # equality at block ends
    worst = max(worst, abs(np.dot(y - theta, theta)) / scale)
    return worst / scale


@pytest.mark.parametrize("seed", range(50))
def test_constrained_fit_lattice_and_kkt(seed):
    rng = np.random.default_rng(seed)
    xi = rng.normal(size=4)
    k0 = 1
    t0 = 0.0
    fit = constrained_fit(xi, k0, t0)
    assert fit.values[k0] == t0
    assert np.all(np.diff(fit.values) >= 0)
    sse = np.sum((xi - fit.values) ** 2)
    lattice = lattice_constrained_sse(xi, k0, t0)
    assert sse <= lattice + 1e-6
    assert lattice - sse < 5e-3
    assert _kkt_residual(xi, fit) < 1e-8


@settings(max_examples=300, deadline=None)
@given(arrays(np.float64, st.integers(1, 25), elements=finite), st.data())
def test_constrained_fit_agrees_with_bisection(xi, data):
    k0 = data.draw(st.integers(0, xi.size - 1))
    t0 = data.draw(finite)
    fit = constrained_fit(xi, k0, t0)
    assert np.all(np.diff(fit.values) >= 0)
    assert fit.values[k0] == t0
    # the recovered multiplier reproduces the fit as a shifted isotonic fit
    y = xi.copy()
    y[k0] += fit.shift
    np.testing.assert_allclose(pava(y).values, fit.values, atol=1e-8 * (1 + np.abs(y).max()))
    if fit.active:
        lam = solve_lambda(xi, k0, t0)
        assert maxmin_at(xi, k0, xi.size * lam) == pytest.approx(t0, abs=1e-8 * (1 + abs(t0)))


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(2, 25), elements=finite), st.data())
def test_constraint_locality_and_sign(xi, data):
    k0 = data.draw(st.integers(0, xi.size - 1))
    t0 = data.draw(finite)
    full = pava(xi)
    fit = constrained_fit(xi, k0, t0, full)
    # multiplier sign follows the direction the constraint pushes the fit
    if t0 > full.values[k0] + 1e-9:
        assert fit.lambda_hat > 0
        assert np.all(fit.values >= full.values - 1e-9)
    elif t0 < full.values[k0] - 1e-9:
        assert fit.lambda_hat < 0
        assert np.all(fit.values <= full.values + 1e-9)
    # away from t0 the null fit is the separate isotonic fit of each side
    left = pava(xi[:k0]).values if k0 else np.empty(0)
    right = pava(xi[k0 + 1:]).values if k0 + 1 < xi.size else np.empty(0)
    side = np.concatenate([left, [t0], right])
    off = fit.values != t0
    np.testing.assert_allclose(fit.values[off], side[off], atol=1e-9)


def test_shared_blocks_are_bitwise_equal():
    rng = np.random.default_rng(3)
    xi = rng.normal(size=200)
    full = pava(xi)
    fit = constrained_fit(xi, 100, full.values[100] + 0.5, full)
    same = fit.values == full.values
    assert same.sum() > 0
    # far-left untouched region must agree exactly, not just approximately
    assert np.array_equal(fit.values[:10], full.values[:10]) or fit.values[0] == fit.t0


# --- step function -----------------------------------------------------------

def test_step_function_examples():
    f = to_step_function([1, 2], [0, 1])
    assert f(0.5) == 1
    assert f(1.7) == 2
    assert f(-1) == 1
    np.testing.assert_array_equal(f(np.array([0.0, 1.0])), [1, 2])
