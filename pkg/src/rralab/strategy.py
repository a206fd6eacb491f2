"""Economic objects derived from the solved value processes.

Feedback maps: propensity to consume ``(D/L)^beta``, optimal investment
fraction ``beta (lambda + Z/L)``, exponential-utility monetary amounts
``lambda + z/ell``, wealth as a log-Euler stochastic exponential, and the
normalized dual density.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .errors import SolverError, ValidationError
from .market import MarketModel, PathBundle
from .opportunity import ExponentialSolution, OpportunitySolution

Array = NDArray[np.float64]


@dataclass
class StrategyProfile:
    """Propensity to consume, investment fractions, and wealth on the grid."""

    kappa_vals: Array  # (n, N+1); 1 at the horizon by convention
    pi_vals: Array     # (n, N+1, d)
    X_vals: Array      # (n, N+1), positive
    x0: float


@dataclass
class DualDensity:
    """Normalized dual optimizer Yhat/y0 and the scale constant y0."""

    Yn_vals: Array  # (n, N+1), starts at 1
    y0: float       # L0 * x0^(p-1)


def consumption_fraction(sol: OpportunitySolution, D_vals: Array) -> Array:
    """Optimal propensity to consume (D/L)^beta; set to 1 at the horizon."""
    if sol.consumption_mode != "intermediate":
        raise ValidationError("consumption fraction requires intermediate consumption")
    kappa = (np.asarray(D_vals) / sol.L_vals) ** sol.params.beta
    kappa[:, -1] = 1.0
    return kappa


def terminal_only_kappa(n_paths: int, n_grid: int) -> Array:
    """Consumption profile without intermediate consumption: bulk at T only."""
    kappa = np.zeros((n_paths, n_grid))
    kappa[:, -1] = 1.0
    return kappa


def _lambda_grid(market: MarketModel, time_grid: Array, paths: PathBundle | None,
                 n_rows: int) -> Array:
    """Market price of risk evaluated on the grid, shape (n Rows, N+1, d)."""
    n_grid = len(time_grid)
    if paths is not None:
        out = np.empty((paths.n_paths, n_grid, market.d))
        for k in range(n_grid):
            out[:, k, :] = market.lambda_at(time_grid[k], paths.factor_states[:, k],
                                            paths.n_paths)
        return out
    if not market.deterministic:
        raise ValidationError("paths are required to evaluate a state-dependent market")
    probe = np.zeros(1)
    out = np.empty((n_rows, n_grid, market.d))
    for k in range(n_grid):
        out[:, k, :] = market.lambda_at(time_grid[k], probe, 1)
    return out


def optimal_fraction(sol: OpportunitySolution, market: MarketModel,
                     paths: PathBundle | None = None) -> Array:
    """Optimal investment fractions beta * (lambda + Z/L) on the grid."""
    lam = _lambda_grid(market, sol.time_grid, paths, sol.n_paths)
    frac = sol.params.beta * (lam + sol.Z_vals / sol.L_vals[..., None])
    if paths is not None and sol.n_paths == 1:
        frac = np.broadcast_to(frac, (paths.n_paths,) + frac.shape[1:]).copy()
    return frac


def exponential_strategy(exp_sol: ExponentialSolution, market: MarketModel,
                         paths: PathBundle | None = None) -> Array:
    """Monetary amounts lambda + z/ell optimal for exponential utility."""
    if market.intermediate:
        raise ValidationError("exponential strategy is defined for terminal-only markets")
    lam = _lambda_grid(market, exp_sol.time_grid, paths, exp_sol.ell_vals.shape[0])
    amounts = lam + exp_sol.z_vals / exp_sol.ell_vals[..., None]
    if paths is not None and exp_sol.ell_vals.shape[0] == 1:
        amounts = np.broadcast_to(amounts, (paths.n_paths,) + amounts.shape[1:]).copy()
    return amounts


def wealth(pi: Array, kappa: Array, paths: PathBundle, x0: float) -> Array:
    """Wealth path of (pi, kappa): log-Euler stochastic exponential, positive.

    The consumption convention at the horizon never enters a grid step; the
    bulk consumption is implicit in kappa_T = 1.
    """
    market = paths.market
    n, N = paths.n_paths, paths.n_steps
    dt = paths.dt
    pi = np.broadcast_to(np.asarray(pi, dtype=float), (n, N + 1, market.d))
    kappa = np.broadcast_to(np.asarray(kappa, dtype=float), (n, N + 1))
    X = np.empty((n, N + 1))
    X[:, 0] = x0
    for k in range(N):
        y = paths.factor_states[:, k]
        sig = market.sigma_at(paths.time_grid[k], y, n)
        cov = np.einsum("nij,nkj->nik", sig, sig, optimize=False)
        pk = pi[:, k, :]
        gain = np.einsum("ni,ni->n", pk, paths.dR[:, k, :], optimize=False)
        quad = np.einsum("ni,nij,nj->n", pk, cov, pk, optimize=False)
        log_step = gain - 0.5 * quad * dt
        if market.intermediate:
            log_step = log_step - kappa[:, k] * dt
        X[:, k + 1] = X[:, k] * np.exp(log_step)
        if not np.all(np.isfinite(X[:, k + 1])):
            bad = int(np.flatnonzero(~np.isfinite(X[:, k + 1]))[0])
            raise SolverError(f"wealth overflow at (path {bad}, step {k + 1})")
    return X


def minimal_martingale_density(market: MarketModel, paths: PathBundle) -> Array:
    """Stochastic exponential of -lambda.M on the grid (the p -> 0 dual limit
    for a trivial utility weight)."""
    n, N = paths.n_paths, paths.n_steps
    dt = paths.dt
    Yn = np.empty((n, N + 1))
    Yn[:, 0] = 1.0
    for k in range(N):
        y = paths.factor_states[:, k]
        lam = market.lambda_at(paths.time_grid[k], y, n)
        sig = market.sigma_at(paths.time_grid[k], y, n)
        cov = np.einsum("nij,nkj->nik", sig, sig, optimize=False)
        dM = paths.dR[:, k, :] - np.einsum("nij,nj->ni", cov, lam, optimize=False) * dt
        theta2 = np.einsum("ni,nij,nj->n", lam, cov, lam, optimize=False)
        log_step = -np.einsum("ni,ni->n", lam, dM, optimize=False) - 0.5 * theta2 * dt
        Yn[:, k + 1] = Yn[:, k] * np.exp(log_step)
    return Yn


def dual_density(sol: OpportunitySolution, market: MarketModel,
                 paths: PathBundle) -> DualDensity:
    """Normalized dual optimizer: stochastic exponential of -lambda.M + N/L."""
    n, N = paths.n_paths, paths.n_steps
    dt = paths.dt
    L = np.broadcast_to(sol.L_vals, (n, N + 1))
    N_incr = np.broadcast_to(sol.N_incr, (n, N))
    Yn = np.empty((n, N + 1))
    Yn[:, 0] = 1.0
    for k in range(N):
        t = paths.time_grid[k]
        y = paths.factor_states[:, k]
        lam = market.lambda_at(t, y, n)
        sig = market.sigma_at(t, y, n)
        cov = np.einsum("nij,nkj->nik", sig, sig, optimize=False)
        dM = paths.dR[:, k, :] - np.einsum("nij,nj->ni", cov, lam, optimize=False) * dt
        drive = -np.einsum("ni,ni->n", lam, dM, optimize=False)
        theta2 = np.einsum("ni,nij,nj->n", lam, cov, lam, optimize=False)
        ortho = N_incr[:, k] / L[:, k]
        log_step = drive - 0.5 * theta2 * dt + ortho - 0.5 * ortho**2
        Yn[:, k + 1] = Yn[:, k] * np.exp(log_step)
        if not np.all(np.isfinite(Yn[:, k + 1])):
            bad = int(np.flatnonzero(~np.isfinite(Yn[:, k + 1]))[0])
            raise SolverError(f"dual density overflow at (path {bad}, step {k + 1})")
    y0 = sol.L0 * market.x0 ** (sol.params.p - 1.0)
    return DualDensity(Yn_vals=Yn, y0=y0)
