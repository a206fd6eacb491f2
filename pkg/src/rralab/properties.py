"""Comparison inequalities and quadratic-variation diagnostics.

Reusable predicates over solver output: how the value process moves with the
utility exponent (in both the primal and dual parametrization), monotonicity
in the pure investment case, the decreasing moment curve
``phi(q) = E[(Y_s/Y_t)^q]^{1/(1-q)}`` of a positive supermartingale with its
entropy limit at q -> 1, and conditional remaining quadratic-variation
bounds for the martingale part of the value process (finite-grid stand-ins
for BMO norms).

All checks are pure functions of immutable solver output. Statistical slack
on stochastic markets defaults to 3 regression standard errors; deterministic
solutions are checked at float resolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .errors import ValidationError
from .market import MarketModel, PathBundle
from .opportunity import (
    ExponentialSolution,
    OpportunitySolution,
    conditional_weight_integral,
    dual_opportunity,
)
from .regression import fit_values, fitted_se, polynomial_basis

Array = NDArray[np.float64]

DEFAULT_N_SE = 3.0
_FLOAT_RTOL = 1e-8  # resolution of "zero slack" comparisons on exact solutions


@dataclass
class CheckRow:
    """One grid-point verdict, ready for the pass/fail matrix CSV."""

    check: str
    p: float
    p0: float | None
    t: float
    lhs: float
    rhs: float
    slack: float
    passed: bool


@dataclass
class PhiCurve:
    """Monte Carlo estimates of the moment curve of a positive ensemble."""

    q_grid: Array
    phi_vals: Array
    se_vals: Array
    entropy_limit: float
    entropy_se: float
    t: float
    s: float


@dataclass
class QuadVarDiagnostic:
    """Conditional remaining quadratic variation of the value-process martingale."""

    time_grid: Array
    estimates: Array   # (n, N+1), nonnegative
    se_vals: Array     # (N+1,)
    bound: float
    label: str


def all_passed(rows: list[CheckRow]) -> bool:
    return all(r.passed for r in rows)


def _float_slack(rhs: Array) -> Array:
    return _FLOAT_RTOL * (1.0 + np.abs(rhs))


def _rows_for(check: str, p: float, p0: float | None, grid: Array, small: Array,
              big: Array, slack: Array) -> list[CheckRow]:
    """Pointwise check small <= big + slack; one row per grid time (worst path)."""
    small = np.atleast_2d(small)
    big = np.atleast_2d(big)
    small, big = np.broadcast_arrays(small, big)
    rows = []
    for k, t in enumerate(grid):
        margin = small[:, k] - big[:, k]
        i = int(np.argmax(margin))
        sl = float(slack[k]) if np.ndim(slack) else float(slack)
        rows.append(CheckRow(check=check, p=p, p0=p0, t=float(t),
                             lhs=float(small[i, k]), rhs=float(big[i, k]),
                             slack=sl, passed=bool(margin[i] <= sl)))
    return rows


def _mean_rows_for(check: str, p: float, p0: float | None, grid: Array, small: Array,
                   big: Array, fit_noise: Array, n_se: float) -> list[CheckRow]:
    """Per-grid-point check of the ensemble mean margin E[small - big] <= 0.

    The almost-sure inequality implies the mean one; the mean has an honest
    Monte Carlo standard error, unlike the extreme over paths. On a single
    (deterministic) path this reduces to the exact pointwise check.
    """
    small = np.atleast_2d(small)
    big = np.atleast_2d(big)
    small, big = np.broadcast_arrays(small, big)
    n = small.shape[0]
    rows = []
    for k, t in enumerate(grid):
        margin = small[:, k] - big[:, k]
        se = float(margin.std() / math.sqrt(n)) if n > 1 else 0.0
        fn = float(fit_noise[k]) if np.ndim(fit_noise) else float(fit_noise)
        mb = float(np.mean(big[:, k]))
        sl = n_se * (se + fn) + _FLOAT_RTOL * (1.0 + abs(mb))
        rows.append(CheckRow(check=check, p=p, p0=p0, t=float(t),
                             lhs=float(np.mean(small[:, k])), rhs=mb,
                             slack=sl, passed=bool(np.mean(margin) <= sl)))
    return rows


# --------------------------------------------------------------------------
# dependence of the value process on the exponent
# --------------------------------------------------------------------------

def _comparison_regime(p: float, p0: float) -> int:
    if 0.0 < p < p0 < 1.0:
        return 1
    if p < p0 < 0.0:
        return 2
    if p < 0.0 < p0 < 1.0:
        return 3
    raise ValidationError(
        f"(p={p:g}, p0={p0:g}) is outside the three comparison regimes"
    )


def check_comparison_dual(sol_a: OpportunitySolution, sol_b: OpportunitySolution,
                          market: MarketModel, paths: PathBundle | None = None,
                          n_se: float = DEFAULT_N_SE) -> list[CheckRow]:
    """Exponent-comparison inequalities between two solutions on one grid.

    ``sol_a`` holds the smaller exponent p, ``sol_b`` the larger p0. Conditional
    expectations entering the dual inequality are estimated with the solvers'
    regression basis so both sides share bias.
    """
    p, p0 = sol_a.params.p, sol_b.params.p
    regime = _comparison_regime(p, p0)
    if sol_a.L_vals.shape != sol_b.L_vals.shape or \
            not np.array_equal(sol_a.time_grid, sol_b.time_grid):
        raise ValidationError("solutions must share the same grid and paths")
    grid = sol_a.time_grid
    q, q0 = sol_a.params.q, sol_b.params.q
    beta, beta0 = sol_a.params.beta, sol_b.params.beta
    k1, k2 = market.k1, market.k2
    mass = np.asarray(market.remaining_mass(grid))

    source = paths if paths is not None else grid
    weight_int = conditional_weight_integral(market, source, power=beta,
                                             basis_degree=sol_a.basis_degree)
    if weight_int.shape[0] == 1 and sol_a.L_vals.shape[0] > 1:
        weight_int = np.broadcast_to(weight_int, sol_a.L_vals.shape)

    Lstar_a = dual_opportunity(sol_a)
    Lstar_b = dual_opportunity(sol_b)
    alpha = q / q0
    k_dual = k1 if regime in (1, 3) else k2
    rhs_dual = weight_int ** (1.0 - alpha) * (k_dual ** (beta - beta0) * Lstar_b) ** alpha
    k_primal = k1 if regime == 3 else k2
    rhs_primal = (k_primal * mass) ** (1.0 - p / p0) * sol_b.L_vals ** (p / p0)

    noise = np.zeros(len(grid))
    for s in (sol_a, sol_b):
        if s.fit_se is not None:
            noise = noise + np.asarray(s.fit_se)

    rows = []
    if regime == 1:
        rows += _mean_rows_for("comparison_dual_Lstar", p, p0, grid, Lstar_a,
                               rhs_dual, noise, n_se)
        rows += _mean_rows_for("comparison_dual_L", p, p0, grid, sol_a.L_vals,
                               rhs_primal, noise, n_se)
    else:
        rows += _mean_rows_for("comparison_dual_Lstar", p, p0, grid, rhs_dual,
                               Lstar_a, noise, n_se)
        rows += _mean_rows_for("comparison_dual_L", p, p0, grid, rhs_primal,
                               sol_a.L_vals, noise, n_se)
    return rows


def check_pure_investment_monotone(solutions: list[OpportunitySolution],
                                   mode: str, n_se: float = DEFAULT_N_SE,
                                   market: MarketModel | None = None) -> list[CheckRow]:
    """Monotonicity of the value process in the exponent for p < 0.

    Without intermediate consumption L is pointwise nondecreasing in p; with
    intermediate consumption the weighted bound
    L(p) <= (k2/k1) mass^(p0-p) L(p0) holds instead.
    """
    if any(s.params.p >= 0 for s in solutions):
        raise ValidationError("pure-investment monotonicity applies to p < 0 only")
    modes = {s.consumption_mode for s in solutions}
    if len(modes) > 1:
        raise ValidationError(f"mixed consumption modes in solutions: {sorted(modes)}")
    if solutions and mode not in modes:
        raise ValidationError(f"solutions are in mode {modes}, not '{mode}'")
    sols = sorted(solutions, key=lambda s: s.params.p)
    rows: list[CheckRow] = []
    for a, b in zip(sols[:-1], sols[1:]):  # a has the smaller p
        grid = a.time_grid
        noise = np.zeros(len(grid))
        for s in (a, b):
            if s.fit_se is not None:
                noise = noise + np.asarray(s.fit_se)
        if mode == "terminal_only":
            rhs = b.L_vals
            check = "pure_investment_monotone"
        else:
            if market is None:
                raise ValidationError("intermediate-mode bound needs the market for k1/k2")
            mass = np.asarray(market.remaining_mass(grid))
            rhs = (market.k2 / market.k1) * mass ** (b.params.p - a.params.p) * b.L_vals
            check = "weighted_consumption_monotone"
        slack = n_se * noise + _float_slack(np.max(np.atleast_2d(rhs), axis=0))
        rows += _rows_for(check, a.params.p, b.params.p, grid, a.L_vals, rhs, slack)
    return rows


def lemma_bound_rows(sol: OpportunitySolution, market: MarketModel,
                     n_se: float = DEFAULT_N_SE) -> list[CheckRow]:
    """A-priori bounds on the value process: for p < 0 it stays below
    k2 * mass^(1-p); for p in (0,1) above k1 * mass^(1-p)."""
    grid = sol.time_grid
    p = sol.params.p
    mass = np.asarray(market.remaining_mass(grid))
    noise = np.asarray(sol.fit_se) if sol.fit_se is not None else np.zeros(len(grid))
    if p < 0.0:
        bound = market.k2 * mass ** (1.0 - p)
        slack = n_se * noise + _float_slack(bound)
        return _rows_for("lemma_upper_bound", p, None, grid, sol.L_vals,
                         np.broadcast_to(bound, sol.L_vals.shape), slack)
    bound = market.k1 * mass ** (1.0 - p)
    slack = n_se * noise + _float_slack(bound)
    return _rows_for("lemma_lower_bound", p, None, grid,
                     np.broadcast_to(bound, sol.L_vals.shape), sol.L_vals, slack)


# --------------------------------------------------------------------------
# moment curve of a positive supermartingale
# --------------------------------------------------------------------------

def phi_curve(Y_vals: Array, time_grid: Array, t: float, s: float,
              q_grid) -> PhiCurve:
    """Monte Carlo moment curve phi(q) = E[(Y_s/Y_t)^q]^(1/(1-q)) on (0,1).

    Also returns the q -> 1 entropy limit exp(-E[(Y_s/Y_t) log(Y_s/Y_t)]),
    which continues the curve when the ensemble is a martingale.
    """
    Y_vals = np.asarray(Y_vals, dtype=float)
    time_grid = np.asarray(time_grid, dtype=float)
    q_grid = np.asarray(q_grid, dtype=float)
    if not (q_grid.ndim == 1 and len(q_grid) > 0 and np.all(np.diff(q_grid) > 0)):
        raise ValidationError("q_grid must be strictly increasing and nonempty")
    if np.any(q_grid <= 0.0) or np.any(q_grid >= 1.0):
        raise ValidationError("q_grid entries must lie in (0,1)")
    it = _grid_index(time_grid, t)
    isd = _grid_index(time_grid, s)
    if not it < isd:
        raise ValidationError(f"need t < s on the grid, got t={t}, s={s}")
    if np.any(Y_vals[:, [it, isd]] <= 0.0):
        raise ValidationError("ensemble must be strictly positive at t and s")

    ratios = Y_vals[:, isd] / Y_vals[:, it]
    n = len(ratios)
    phi = np.empty(len(q_grid))
    se = np.empty(len(q_grid))
    for i, q in enumerate(q_grid):
        powered = ratios**q
        m = float(np.mean(powered))
        se_m = float(np.std(powered, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        expo = 1.0 / (1.0 - q)
        phi[i] = m**expo
        se[i] = abs(expo) * m ** (expo - 1.0) * se_m

    ent = ratios * np.log(ratios)
    ent_mean = float(np.mean(ent))
    ent_se = float(np.std(ent, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    limit = math.exp(-ent_mean)
    return PhiCurve(q_grid=q_grid, phi_vals=phi, se_vals=se,
                    entropy_limit=limit, entropy_se=limit * ent_se,
                    t=float(time_grid[it]), s=float(time_grid[isd]))


def phi_monotone_rows(curve: PhiCurve, p_tag: float = float("nan")) -> list[CheckRow]:
    """Adjacent-pair rows asserting phi(q_{i+1}) <= phi(q_i) + 2(SE_i + SE_{i+1})."""
    rows = []
    for i in range(len(curve.q_grid) - 1):
        slack = 2.0 * (curve.se_vals[i] + curve.se_vals[i + 1]) + _FLOAT_RTOL
        rows.append(CheckRow(
            check="phi_monotone", p=p_tag, p0=None, t=float(curve.q_grid[i + 1]),
            lhs=float(curve.phi_vals[i + 1]), rhs=float(curve.phi_vals[i]),
            slack=float(slack),
            passed=bool(curve.phi_vals[i + 1] <= curve.phi_vals[i] + slack),
        ))
    return rows


def _grid_index(time_grid: Array, t: float) -> int:
    hits = np.flatnonzero(np.isclose(time_grid, t, rtol=0.0, atol=1e-12))
    if len(hits) != 1:
        raise ValidationError(f"time {t} is not a grid point")
    return int(hits[0])


# --------------------------------------------------------------------------
# quadratic-variation diagnostics
# --------------------------------------------------------------------------

def _remaining_conditional(target_incr: Array, paths: PathBundle | None,
                           grid: Array, basis_degree: int):
    """Regression estimates of E[sum_{j>=k} target_j | F_k] per grid point."""
    n, N = target_incr.shape
    estimates = np.zeros((n, N + 1))
    se_vals = np.zeros(N + 1)
    remaining = np.concatenate(
        [np.cumsum(target_incr[:, ::-1], axis=1)[:, ::-1], np.zeros((n, 1))], axis=1
    )
    if n == 1 or paths is None:
        return np.maximum(remaining, 0.0), se_vals
    for k in range(N):
        basis = polynomial_basis(paths.factor_states[:, k], basis_degree)
        fitted = fit_values(basis, remaining[:, k], context=f"remaining QV at step {k}")
        estimates[:, k] = np.maximum(fitted, 0.0)
        se_vals[k] = fitted_se(basis, remaining[:, k], fitted)
    return estimates, se_vals


def quad_var_diagnostic(sol, paths: PathBundle | None = None,
                        localizing_cap: float | None = None,
                        market: MarketModel | None = None,
                        basis_degree: int | None = None) -> QuadVarDiagnostic:
    """Conditional remaining quadratic variation of the martingale part, with
    the bound implied by the submartingale square argument.

    For p < 0 the bound is k2^2 without intermediate consumption and
    k2^2 (1+T)^(2-2p) with it; for p in (0,1) a localizing cap on the value
    process must be supplied. Exponential solutions use the square of the
    claim bound.
    """
    if isinstance(sol, ExponentialSolution):
        grid = sol.time_grid
        incr = sol.M_incr**2
        cap = float(np.max(sol.claim_terminal))
        bound = cap**2
        label = "exponential"
        degree = basis_degree if basis_degree is not None else 3
    else:
        grid = sol.time_grid
        incr = sol.M_incr**2
        degree = basis_degree if basis_degree is not None else sol.basis_degree
        p = sol.params.p
        if market is None and paths is not None:
            market = paths.market
        if market is None:
            raise ValidationError("market (or paths) required for the bound constants")
        T = grid[-1]
        if p < 0.0:
            if sol.consumption_mode == "intermediate":
                bound = market.k2**2 * (1.0 + T) ** (2.0 - 2.0 * p)
            else:
                bound = market.k2**2
            label = f"p={p:g}"
        else:
            if localizing_cap is None:
                raise ValidationError(
                    "p in (0,1) requires a localizing cap on the value process"
                )
            if sol.consumption_mode == "intermediate":
                c = max(1.0, (1.0 + T) * market.k2 / market.k1)
            else:
                c = 1.0
            bound = (c * localizing_cap) ** 2
            label = f"p={p:g} capped"
    estimates, se_vals = _remaining_conditional(incr, paths, grid, degree)
    return QuadVarDiagnostic(time_grid=grid, estimates=estimates, se_vals=se_vals,
                             bound=float(bound), label=label)


def quad_var_rows(diag: QuadVarDiagnostic, p: float,
                  n_se: float = DEFAULT_N_SE) -> list[CheckRow]:
    slack = n_se * diag.se_vals + _FLOAT_RTOL * (1.0 + diag.bound)
    bound = np.full_like(diag.estimates, diag.bound)
    return _rows_for("quad_var_bound", p, None, diag.time_grid, diag.estimates,
                     bound, slack)


def lambda_bmo_proxy(sol: OpportunitySolution, market: MarketModel,
                     paths: PathBundle | None = None,
                     n_se: float = DEFAULT_N_SE) -> list[CheckRow]:
    """Finite-grid stand-in for the mean-variance-tradeoff BMO bound.

    Checks E[int_t^T lambda' dSigma lambda | F_t] against the combination
    2*C1/inf(L) + 2*C_QV/inf(L)^2 implied by the value-process BSDE, with the
    empirical min/max of the solved process standing in for the localized
    bounds.
    """
    grid = sol.time_grid
    p, q = sol.params.p, sol.params.q
    T = float(grid[-1])
    dt = float(grid[1] - grid[0])
    n = paths.n_paths if paths is not None else sol.n_paths
    theta2 = np.empty((n, len(grid) - 1))
    for k in range(len(grid) - 1):
        y = paths.factor_states[:, k] if paths is not None else np.zeros(1)
        lam = market.lambda_at(grid[k], y, n)
        sig = market.sigma_at(grid[k], y, n)
        cov = np.einsum("nij,nkj->nik", sig, sig, optimize=False)
        theta2[:, k] = np.einsum("ni,nij,nj->n", lam, cov, lam, optimize=False)
    estimates, se_vals = _remaining_conditional(theta2 * dt, paths, grid,
                                                sol.basis_degree)

    ell_inf = float(np.min(sol.L_vals))
    ell_sup = float(np.max(sol.L_vals))
    if ell_inf <= 0.0:
        raise ValidationError("value process must be bounded away from zero")
    if p < 0.0:
        c1 = (2.0 / q) * market.k2
        if sol.consumption_mode == "intermediate":
            c1 += (2.0 / q) * (1.0 - p) * market.k2**sol.params.beta \
                * ell_sup**q * (1.0 + T)
        if sol.consumption_mode == "intermediate":
            c_qv = market.k2**2 * (1.0 + T) ** (2.0 - 2.0 * p)
        else:
            c_qv = market.k2**2
    else:
        c1 = (2.0 / abs(q)) * ell_sup
        if sol.consumption_mode == "intermediate":
            c = max(1.0, (1.0 + T) * market.k2 / market.k1)
        else:
            c = 1.0
        c_qv = (c * ell_sup) ** 2
    bound = 2.0 * c1 / ell_inf + 2.0 * c_qv / ell_inf**2
    slack = n_se * se_vals + _FLOAT_RTOL * (1.0 + bound)
    bound_arr = np.full_like(estimates, bound)
    return _rows_for("lambda_bmo_proxy", p, None, grid, estimates, bound_arr, slack)
