"""Doubly robust pseudo-outcomes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EvaluationUnavailable, NonPositiveG, SchemaMismatch
from .nuisance import Dataset


@dataclass(frozen=True)
class PseudoOutcomes:
    xi: np.ndarray
    mbar: np.ndarray
    mu_ii: np.ndarray
    g_ii: np.ndarray
    source: str


def compute(data: Dataset, model) -> PseudoOutcomes:
    """``xi_i = (Y_i - mu(A_i, L_i)) / g(A_i, L_i) + mean_j mu(A_i, L_j)``.

    The average over j runs over the model's reference confounders (the
    full sample, own row included, unless built otherwise).
    """
    mu_ii, g_ii, mbar = (np.asarray(v, dtype=float) for v in model.evaluate(data))
    if np.any(~(g_ii > 0)):
        raise NonPositiveG(f"normalized propensity <= 0 at row {int(np.argmin(g_ii))}")
    xi = (data.Y - mu_ii) / g_ii + mbar
    if not np.all(np.isfinite(xi)):
        raise SchemaMismatch("non-finite pseudo-outcome")
    return PseudoOutcomes(xi, mbar, mu_ii, g_ii, getattr(model, "source", "custom"))


def mbar_function(model, reference_L=None):
    """Callable ``a -> mean_j mu(a, L_j)``; defaults to the model's reference rows."""
    if reference_L is None:
        return model.mbar
    outcome = getattr(model, "outcome", None)
    if outcome is None:
        raise EvaluationUnavailable("model has no evaluable outcome regression")
    L_ref = np.asarray(reference_L, dtype=float)
    return lambda a: outcome.mbar(a, L_ref)
