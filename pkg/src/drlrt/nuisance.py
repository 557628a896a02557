"""Nuisance models: outcome regression, Gaussian propensity, normalized propensity.

Parametric fits are ordinary least squares on named feature maps. The
normalized propensity is ``g(a, l) = pi(a | l) / f(a)`` where ``pi`` is
truncated from below and ``f(a)`` averages the truncated ``pi(a | L_j)``
over a reference sample of confounders.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import pandas as pd

from .errors import (
    DegenerateDesign,
    EvaluationUnavailable,
    LengthMismatch,
    NonPositiveG,
    SchemaMismatch,
)

log = logging.getLogger(__name__)

DEFAULT_FLOOR = 0.01
# pairwise evaluations per chunk in the O(n^2) averages
_CHUNK = 250_000

FeatureMap = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Dataset:
    L: np.ndarray  # (n, d)
    A: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        L = np.asarray(self.L, dtype=float)
        if L.ndim == 1:
            L = L.reshape(-1, 1) if L.size else L.reshape(len(self.A), 0)
        A = np.asarray(self.A, dtype=float)
        Y = np.asarray(self.Y, dtype=float)
        if A.ndim != 1 or Y.shape != A.shape or L.shape[0] != A.size:
            raise LengthMismatch(
                f"inconsistent shapes L{L.shape}, A{A.shape}, Y{Y.shape}"
            )
        for name, arr in (("L", L), ("A", A), ("Y", Y)):
            if not np.all(np.isfinite(arr)):
                raise SchemaMismatch(f"{name} contains non-finite values")
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Y", Y)

    @property
    def n(self) -> int:
        return self.A.size

    @property
    def d(self) -> int:
        return self.L.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.L[idx], self.A[idx], self.Y[idx])


# --------------------------------------------------------------------------
# feature maps; each takes a (m,) treatment vector and (m, d) confounders


def _well_specified_y(a, L):
    inside = (a >= -1.5) & (a <= 1.5)
    return np.column_stack([
        np.ones_like(a), a, L, a[:, None] * L, a ** 3,
        a ** 4 * inside, (a > 1.5).astype(float), (a < -1.5).astype(float),
    ])


def _l1_only(a, L):
    return np.column_stack([np.ones_like(a), L[:, 0]])


def _all_l(a, L):
    return np.column_stack([np.ones_like(a), L])


def _intercept(a, L):
    return np.ones((a.size, 1))


FEATURE_MAPS: dict[str, FeatureMap] = {
    "well_specified_y": _well_specified_y,
    "misspecified_y": _l1_only,
    "well_specified_a": _all_l,
    "misspecified_a": _l1_only,
    "intercept": _intercept,
}


def _resolve(spec) -> tuple[str, FeatureMap]:
    if callable(spec):
        return getattr(spec, "__name__", "custom"), spec
    try:
        return spec, FEATURE_MAPS[spec]
    except KeyError:
        raise SchemaMismatch(
            f"unknown feature map {spec!r}; choose from {sorted(FEATURE_MAPS)}"
        ) from None


def _ols(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    n, p = X.shape
    if n <= p:
        raise DegenerateDesign(f"{n} rows for {p} features")
    XtX = X.T @ X
    Xty = X.T @ y
    if np.linalg.matrix_rank(XtX) < p:
        ridge = 1e-8 * np.trace(XtX) / p
        log.warning("rank-deficient design (%d features); adding ridge %.3g", p, ridge)
        XtX = XtX + ridge * np.eye(p)
    try:
        beta = np.linalg.solve(XtX, Xty)
    except np.linalg.LinAlgError as exc:
        raise DegenerateDesign(str(exc)) from exc
    if not np.all(np.isfinite(beta)):
        raise DegenerateDesign("non-finite regression coefficients")
    return beta


@dataclass(frozen=True)
class OutcomeModel:
    name: str
    features: FeatureMap = field(repr=False)
    coefficients: np.ndarray

    def mu(self, a, L) -> np.ndarray:
        a = np.atleast_1d(np.asarray(a, dtype=float))
        L = np.asarray(L, dtype=float).reshape(a.size, -1)
        return self.features(a, L) @ self.coefficients

    def mbar(self, a, L_ref) -> np.ndarray:
        """Mean over reference rows j of mu(a, L_j), for each entry of ``a``."""
        a = np.atleast_1d(np.asarray(a, dtype=float))
        L_ref = np.asarray(L_ref, dtype=float)
        return _pairwise_mean(lambda aa, LL: self.mu(aa, LL), a, L_ref)


@dataclass(frozen=True)
class PropensityModel:
    name: str
    features: FeatureMap = field(repr=False)
    mean_coefficients: np.ndarray
    sigma2: float

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise DegenerateDesign("propensity variance must be positive")

    def mean(self, L) -> np.ndarray:
        L = np.asarray(L, dtype=float)
        return self.features(np.zeros(L.shape[0]), L) @ self.mean_coefficients

    def pi(self, a, L) -> np.ndarray:
        """Untruncated conditional density of A at ``a`` given ``L``."""
        a = np.atleast_1d(np.asarray(a, dtype=float))
        L = np.asarray(L, dtype=float).reshape(a.size, -1)
        z2 = (a - self.mean(L)) ** 2 / self.sigma2
        return np.exp(-0.5 * z2) / math.sqrt(2 * math.pi * self.sigma2)


def _pairwise_mean(fn, a, L_ref):
    """out[i] = mean_j fn(a[i], L_ref[j]), evaluated in row chunks."""
    m, r = a.size, L_ref.shape[0]
    out = np.empty(m)
    step = max(1, _CHUNK // max(r, 1))
    for lo in range(0, m, step):
        hi = min(m, lo + step)
        aa = np.repeat(a[lo:hi], r)
        LL = np.tile(L_ref, (hi - lo, 1))
        out[lo:hi] = fn(aa, LL).reshape(hi - lo, r).mean(axis=1)
    return out


def fit_outcome(data: Dataset, spec="well_specified_y") -> OutcomeModel:
    name, fmap = _resolve(spec)
    beta = _ols(fmap(data.A, data.L), data.Y)
    return OutcomeModel(name, fmap, beta)


def fit_propensity(data: Dataset, spec="well_specified_a", sigma2: float | None = None) -> PropensityModel:
    """Gaussian model for A given L with OLS mean and fixed or residual variance."""
    name, fmap = _resolve(spec)
    X = fmap(np.zeros(data.n), data.L)
    gamma = _ols(X, data.A)
    if sigma2 is None:
        resid = data.A - X @ gamma
        sigma2 = float(resid @ resid) / (data.n - X.shape[1])
    return PropensityModel(name, fmap, gamma, float(sigma2))


def truncate(p, floor: float = DEFAULT_FLOOR):
    return np.maximum(p, floor)


@dataclass(frozen=True)
class NuisanceModel:
    """Fitted outcome and propensity models plus the reference confounders."""

    outcome: OutcomeModel
    propensity: PropensityModel
    reference_L: np.ndarray
    truncation_floor: float = DEFAULT_FLOOR

    def __post_init__(self):
        if not self.truncation_floor > 0:
            raise ValueError("truncation floor must be positive")
        if len(self.reference_L) == 0:
            raise EvaluationUnavailable("empty reference sample")

    source = "parametric"

    def mu(self, a, L):
        return self.outcome.mu(a, L)

    def pi(self, a, L):
        return truncate(self.propensity.pi(a, L), self.truncation_floor)

    def density(self, a) -> np.ndarray:
        """Marginal treatment density: mean of truncated pi(a | L_j)."""
        a = np.atleast_1d(np.asarray(a, dtype=float))
        return _pairwise_mean(self.pi, a, self.reference_L)

    def g(self, a, L, density=None):
        if density is None:
            density = self.density(a)
        return self.pi(a, L) / density

    def mbar(self, a):
        return self.outcome.mbar(a, self.reference_L)

    def evaluate(self, data: Dataset):
        """Row-aligned ``(mu_ii, g_ii, mbar_i)`` for the observations."""
        return self.mu(data.A, data.L), self.g(data.A, data.L), self.mbar(data.A)


def build_model(outcome: OutcomeModel, propensity: PropensityModel, reference_L,
                truncation_floor: float = DEFAULT_FLOOR) -> NuisanceModel:
    return NuisanceModel(outcome, propensity, np.asarray(reference_L, dtype=float),
                         truncation_floor)


def fit_nuisance(data: Dataset, outcome_spec="well_specified_y",
                 propensity_spec="well_specified_a", sigma2: float | None = None,
                 reference_L=None, truncation_floor: float = DEFAULT_FLOOR) -> NuisanceModel:
    ref = data.L if reference_L is None else reference_L
    return build_model(fit_outcome(data, outcome_spec),
                       fit_propensity(data, propensity_spec, sigma2), ref,
                       truncation_floor)


class IdentityNuisance:
    """mu = 0 and g = 1: pseudo-outcomes equal the raw responses."""

    source = "identity"

    def evaluate(self, data: Dataset):
        return np.zeros(data.n), np.ones(data.n), np.zeros(data.n)

    def mbar(self, a):
        return np.zeros(np.atleast_1d(a).shape)


@dataclass(frozen=True)
class ExternalNuisance:
    """Row-aligned nuisance values computed elsewhere."""

    mu_ii: np.ndarray
    g_ii: np.ndarray
    mbar_i: np.ndarray
    mu_matrix: np.ndarray | None = None

    source = "external"

    def __post_init__(self):
        n = self.mu_ii.size
        if self.g_ii.size != n or self.mbar_i.size != n:
            raise SchemaMismatch("external nuisance columns differ in length")
        if np.any(self.g_ii <= 0):
            bad = int(np.flatnonzero(self.g_ii <= 0)[0])
            raise NonPositiveG(f"g_ii <= 0 at row {bad}")
        if self.mu_matrix is not None and self.mu_matrix.shape != (n, n):
            raise SchemaMismatch(f"mu_matrix has shape {self.mu_matrix.shape}, expected {(n, n)}")

    def evaluate(self, data: Dataset):
        if data.n != self.mu_ii.size:
            raise EvaluationUnavailable(
                f"external nuisance has {self.mu_ii.size} rows, data has {data.n}"
            )
        return self.mu_ii, self.g_ii, self.mbar_i

    def mbar(self, a):
        raise EvaluationUnavailable("external nuisances cannot be evaluated off-sample")

    def restrict(self, idx) -> "ExternalNuisance":
        """Nuisances for a subset of rows, averaging m-bar within the subset."""
        if self.mu_matrix is None:
            raise EvaluationUnavailable("re-averaging m-bar needs the mu_matrix file")
        idx = np.asarray(idx)
        sub = self.mu_matrix[np.ix_(idx, idx)]
        return ExternalNuisance(self.mu_ii[idx], self.g_ii[idx], sub.mean(axis=1), sub)


EXTERNAL_COLUMNS = ("row", "mu_ii", "g_ii", "mbar")


def load_external_nuisance(path, mu_matrix_path=None) -> ExternalNuisance:
    df = pd.read_csv(path)
    missing = [c for c in EXTERNAL_COLUMNS if c not in df.columns]
    if missing:
        raise SchemaMismatch(f"{path}: missing column(s) {', '.join(missing)}")
    if df[list(EXTERNAL_COLUMNS)].isna().any().any():
        raise SchemaMismatch(f"{path}: empty or NA cells")
    df = df.sort_values("row")
    if not np.array_equal(df["row"].to_numpy(), np.arange(len(df))):
        raise SchemaMismatch(f"{path}: rows must be 0..n-1")
    mu_matrix = None
    if mu_matrix_path is not None:
        mu_matrix = np.loadtxt(mu_matrix_path, delimiter=",", ndmin=2)
    return ExternalNuisance(
        df["mu_ii"].to_numpy(float), df["g_ii"].to_numpy(float),
        df["mbar"].to_numpy(float), mu_matrix,
    )


def export_nuisance(model, data: Dataset, path, mu_matrix_path=None) -> None:
    """Write ``model``'s row-aligned values in the external nuisance format."""
    mu_ii, g_ii, mbar = model.evaluate(data)
    df = pd.DataFrame({"row": np.arange(data.n), "mu_ii": mu_ii, "g_ii": g_ii, "mbar": mbar})
    df.to_csv(path, index=False, float_format="%.17g")
    if mu_matrix_path is not None:
        n = data.n
        mat = model.mu(np.repeat(data.A, n), np.tile(data.L, (n, 1))).reshape(n, n)
        np.savetxt(Path(mu_matrix_path), mat, delimiter=",", fmt="%.17g")
