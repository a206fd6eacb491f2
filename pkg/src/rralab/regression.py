"""Least-squares machinery for the backward Monte Carlo solvers.

Regressions run through explicit normal equations assembled with ``einsum``
so results do not depend on BLAS thread count; the basis is a standardized
polynomial in the factor state, degrading to a constant when the state is
degenerate (deterministic markets).
"""

from __future__ import annotations

import numpy as np
from numpy.typing import NDArray

from .errors import SolverError

Array = NDArray[np.float64]

_COND_LIMIT = 1e12


def polynomial_basis(states: Array, degree: int) -> Array:
    """Design matrix of standardized monomials 1, z, ..., z^degree."""
    x = np.asarray(states, dtype=float)
    n = x.shape[0]
    scale = float(x.std())
    if degree <= 0 or not np.isfinite(scale) or scale < 1e-12:
        return np.ones((n, 1))
    z = (x - float(x.mean())) / scale
    cols = [np.ones(n)]
    for _ in range(degree):
        cols.append(cols[-1] * z)
    return np.stack(cols, axis=1)


def fit_values(basis: Array, targets: Array, context: str = "") -> Array:
    """Fitted values of an OLS regression of ``targets`` on ``basis``.

    ``targets`` may carry extra trailing axes; the regression is run
    column-wise. Raises SolverError when the design matrix is numerically
    singular.
    """
    gram = np.einsum("ni,nj->ij", basis, basis, optimize=False)
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        where = f" ({context})" if context else ""
        raise SolverError(f"regression design matrix numerically singular{where}")
    rhs = np.einsum("ni,n...->i...", basis, targets, optimize=False)
    coef = np.linalg.solve(gram, rhs.reshape(gram.shape[0], -1))
    fitted = np.einsum("ni,i...->n...", basis, coef.reshape(rhs.shape), optimize=False)
    return fitted


def fitted_se(basis: Array, targets: Array, fitted: Array) -> float:
    """Root-mean-square standard error of the fitted conditional mean."""
    resid = np.asarray(targets) - np.asarray(fitted)
    n, k = basis.shape
    return float(resid.std() * np.sqrt(k / n))
