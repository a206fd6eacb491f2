"""Solvers for the reduced value processes of the consumption/investment problem.

The central object is the opportunity process ``L``: the conditional optimal
value scaled out of wealth, characterized backward in time by a quadratic
BSDE with terminal value ``D_T``,

    dL = (q/2) L (lambda + Z/L)' dSigma (lambda + Z/L) dt
         + (p-1) D^beta L^q dmu + Z dM + dN,

where ``q`` and ``beta`` derive from the utility exponent ``p`` and the
``dmu`` term is present only with intermediate consumption. In deterministic
markets (Z = N = 0) this reduces to a scalar ODE, integrated here with an
adaptive Runge-Kutta scheme. In stochastic markets the solver is a
least-squares Monte Carlo backward induction: conditional expectations are
polynomial regressions on the factor state, the drift is integrated with a
trapezoidal rule whose left endpoint is refined by Picard iteration, and the
integrand ``Z`` is recovered by regressing martingale increments against the
Brownian increments.

Companion processes solved by the same machinery: the exponential-utility
analogue (same BSDE at q = 1, terminal value equal to the utility weight at
the horizon) and the remaining-utility-weight process
``eta_t = E[int_t^T D dmu° | F_t]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.typing import NDArray
from scipy.integrate import quad, solve_ivp

from .errors import SolverError, ValidationError
from .market import MarketModel, PathBundle, RiskAversionParams, uniform_grid
from .regression import fit_values, fitted_se, polynomial_basis

Array = NDArray[np.float64]

DEFAULT_BASIS_DEGREE = 3
DEFAULT_PICARD_ITERS = 8
DEFAULT_FLOOR_EPS = 1e-6
UNRELIABLE_FLOOR_FRACTION = 1e-3

_ODE_RTOL = 1e-10
_ODE_ATOL = 1e-14


@dataclass
class OpportunitySolution:
    """Gridded estimates of (L, Z, orthogonal increments) for one exponent."""

    params: RiskAversionParams
    time_grid: Array
    L_vals: Array        # (n, N+1)
    Z_vals: Array        # (n, N+1, d), terminal row zero
    N_incr: Array        # (n, N) orthogonal-martingale increments
    M_incr: Array        # (n, N) total martingale-part increments
    solver_tag: str      # "ode_exact" | "lsmc"
    basis_degree: int
    picard_iters: int
    floor_eps: float
    consumption_mode: str
    floor_count: int = 0
    bound_clip_count: int = 0
    unreliable: bool = False
    fit_se: Array | None = None  # (N+1,) accumulated regression noise scale

    @property
    def n_paths(self) -> int:
        return self.L_vals.shape[0]

    @property
    def L0(self) -> float:
        return float(np.mean(self.L_vals[:, 0]))


@dataclass
class EtaProcess:
    """Conditional expectation of the remaining utility weight and its KW parts."""

    time_grid: Array
    eta_vals: Array      # (n, N+1)
    Z_eta: Array         # (n, N+1, d)
    N_incr: Array        # (n, N)
    M_incr: Array        # (n, N)
    solver_tag: str
    fit_se: Array | None = None

    @property
    def eta0(self) -> float:
        return float(np.mean(self.eta_vals[:, 0]))


@dataclass
class ExponentialSolution:
    """Exponential-utility value process for the claim B = log(D_T)."""

    time_grid: Array
    ell_vals: Array      # (n, N+1)
    z_vals: Array        # (n, N+1, d)
    n_incr: Array        # (n, N)
    M_incr: Array        # (n, N)
    claim_terminal: Array  # exp(B) per path = D_T
    solver_tag: str
    floor_count: int = 0
    bound_clip_count: int = 0
    unreliable: bool = False
    fit_se: Array | None = None


def value_estimate(sol: OpportunitySolution, x0: float) -> float:
    """Value of the control problem at time zero, L0 * x0^p / p."""
    p = sol.params.p
    return sol.L0 * x0**p / p


def dual_opportunity(sol: OpportunitySolution) -> Array:
    """Dual value process, the beta-th power of the primal one."""
    return sol.L_vals ** sol.params.beta


# --------------------------------------------------------------------------
# deterministic (ODE) path
# --------------------------------------------------------------------------

def _deterministic_coeffs(market: MarketModel):
    probe = np.zeros(1)

    def theta2(t: float) -> float:
        lam = market.lambda_at(t, probe, 1)[0]
        sig = market.sigma_at(t, probe, 1)[0]
        cov = sig @ sig.T
        return float(lam @ cov @ lam)

    def weight(t: float) -> float:
        return float(market.d_at(t, probe, 1)[0])

    return theta2, weight


def _integrate_backward(market: MarketModel, rhs, terminal: float, time_grid: Array,
                        floor: float) -> Array:
    """Integrate L' = rhs(t, L) backward from L(T) = terminal onto the grid."""
    T = market.T
    s_eval = (T - np.asarray(time_grid))[::-1]

    def rhs_s(s, y):
        return -rhs(T - s, y)

    res = solve_ivp(rhs_s, (0.0, T), [terminal], method="RK45",
                    rtol=_ODE_RTOL, atol=_ODE_ATOL, t_eval=s_eval)
    if not res.success:
        raise SolverError(f"backward ODE integration failed: {res.message}")
    vals = res.y[0][::-1].copy()
    if np.min(vals) <= floor:
        raise SolverError(
            "ODE solution hit the positivity floor; check market/utility parameters"
        )
    return vals


def solve_ode(market: MarketModel, params: RiskAversionParams, time_grid: Array,
              floor_eps: float = DEFAULT_FLOOR_EPS) -> OpportunitySolution:
    """Exact opportunity process for markets with deterministic coefficients.

    Solves L'(t) = (q/2) theta2(t) L + (p-1) D(t)^beta L^q [intermediate only]
    backward from L(T) = D(T).
    """
    if not market.deterministic:
        raise ValidationError("solve_ode requires a market with deterministic coefficients")
    time_grid = np.asarray(time_grid, dtype=float)
    theta2, weight = _deterministic_coeffs(market)
    p, q, beta = params.p, params.q, params.beta
    intermediate = market.intermediate

    def rhs(t: float, L):
        out = 0.5 * q * theta2(t) * L
        if intermediate:
            out = out + (p - 1.0) * weight(t) ** beta * np.maximum(L, 0.0) ** q
        return out

    vals = _integrate_backward(market, rhs, weight(market.T), time_grid,
                               floor_eps * market.k1)
    n_steps = len(time_grid) - 1
    return OpportunitySolution(
        params=params,
        time_grid=time_grid,
        L_vals=vals[None, :],
        Z_vals=np.zeros((1, n_steps + 1, market.d)),
        N_incr=np.zeros((1, n_steps)),
        M_incr=np.zeros((1, n_steps)),
        solver_tag="ode_exact",
        basis_degree=0,
        picard_iters=0,
        floor_eps=floor_eps,
        consumption_mode=market.consumption_mode,
        fit_se=np.zeros(n_steps + 1),
    )


# --------------------------------------------------------------------------
# least-squares Monte Carlo backward induction
# --------------------------------------------------------------------------

def _quadratic_form(v: Array, cov: Array) -> Array:
    return np.einsum("ni,nij,nj->n", v, cov, v, optimize=False)


def _backward_lsmc(paths: PathBundle, driver: Callable, terminal: Array,
                   clip: Callable, basis_degree: int, picard_iters: int,
                   geometric: bool = False):
    """Shared backward induction engine.

    ``driver(t, vals, Z, lam, cov, D)`` returns the drift rate dA/dt per path;
    ``clip(step_index, vals)`` returns (clipped values, floored count,
    bound-clipped count). The driver increment over a step is a trapezoid:
    additive for drivers that do not scale with the value, multiplicative
    (trapezoid on the log rate) for the positive value-process BSDEs, whose
    drivers are close to linear in the value; the latter keeps the step
    accurate and positive even when the drift rate is large.
    """
    market = paths.market
    grid = paths.time_grid
    n, N, d = paths.n_paths, paths.n_steps, market.d
    dt = paths.dt

    vals = np.empty((n, N + 1))
    Z = np.zeros((n, N + 1, d))
    N_incr = np.zeros((n, N))
    M_incr = np.zeros((n, N))
    fit_se = np.zeros(N + 1)
    floor_count = 0
    clip_count = 0

    vals[:, N] = terminal
    y_right = paths.factor_states[:, N]
    lam_right = market.lambda_at(grid[N], y_right, n)
    sig_right = market.sigma_at(grid[N], y_right, n)
    cov_right = np.einsum("nij,nkj->nik", sig_right, sig_right, optimize=False)
    f_right = driver(grid[N], vals[:, N], Z[:, N, :], lam_right, cov_right,
                     paths.D_vals[:, N])

    for k in range(N - 1, -1, -1):
        t = grid[k]
        y = paths.factor_states[:, k]
        lam = market.lambda_at(t, y, n)
        sig = market.sigma_at(t, y, n)
        cov = np.einsum("nij,nkj->nik", sig, sig, optimize=False)
        D_k = paths.D_vals[:, k]

        basis = polynomial_basis(y, basis_degree)
        if geometric:
            modified = vals[:, k + 1] * np.exp(-0.5 * dt * f_right / vals[:, k + 1])
        else:
            modified = vals[:, k + 1] - 0.5 * dt * f_right
        targets = np.stack([vals[:, k + 1], modified], axis=1)
        fitted = fit_values(basis, targets, context=f"step {k}, t={t:g}")
        cond_plain = fitted[:, 0]
        cond_mod = fitted[:, 1]
        mart = vals[:, k + 1] - cond_plain

        if d > 0:
            z_target = mart[:, None] * paths.dW[:, k, :] / dt
            zW = fit_values(basis, z_target, context=f"Z at step {k}")
            Z[:, k, :] = np.linalg.solve(np.swapaxes(sig, -1, -2), zW[..., None])[..., 0]

        level = np.maximum(cond_mod, 1e-300) if geometric else cond_mod
        for _ in range(picard_iters):
            f_left = driver(t, level, Z[:, k, :], lam, cov, D_k)
            if geometric:
                level = cond_mod * np.exp(-0.5 * dt * f_left / level)
            else:
                level = cond_mod - 0.5 * dt * f_left
            level, n_floor, n_clip = clip(k, level)
        floor_count += n_floor
        clip_count += n_clip
        vals[:, k] = level

        M_incr[:, k] = mart
        if d > 0:
            N_incr[:, k] = mart - np.einsum(
                "ni,nij,nj->n", Z[:, k, :], sig, paths.dW[:, k, :], optimize=False
            )
        else:
            N_incr[:, k] = mart
        step_se = fitted_se(basis, vals[:, k + 1], cond_plain)
        fit_se[k] = np.hypot(step_se, fit_se[k + 1])

        f_right = driver(t, vals[:, k], Z[:, k, :], lam, cov, D_k)

    return vals, Z, N_incr, M_incr, fit_se, floor_count, clip_count


def solve_lsmc(market: MarketModel, params: RiskAversionParams, paths: PathBundle,
               basis_degree: int = DEFAULT_BASIS_DEGREE,
               picard_iters: int = DEFAULT_PICARD_ITERS,
               floor_eps: float = DEFAULT_FLOOR_EPS) -> OpportunitySolution:
    """Least-squares Monte Carlo solution of the opportunity-process BSDE."""
    _check_paths(market, paths)
    if basis_degree < 0:
        raise ValidationError(f"basis_degree must be >= 0, got {basis_degree}")
    if picard_iters < 1:
        raise ValidationError(f"picard_iters must be >= 1, got {picard_iters}")

    p, q, beta = params.p, params.q, params.beta
    intermediate = market.intermediate
    floor = floor_eps * market.k1
    mass = np.asarray(market.remaining_mass(paths.time_grid))
    if p < 0:
        upper = market.k2 * mass ** (1.0 - p)
        lower = None
    else:
        upper = None
        lower = market.k1 * mass ** (1.0 - p)

    def driver(t, level, Z, lam, cov, D_k):
        v = lam + Z / level[:, None] if market.d > 0 else lam
        out = 0.5 * q * level * _quadratic_form(v, cov)
        if intermediate:
            out = out + (p - 1.0) * D_k**beta * level**q
        return out

    def clip(k, level):
        n_floor = int(np.count_nonzero(level < floor))
        level = np.maximum(level, floor)
        if upper is not None:
            n_clip = int(np.count_nonzero(level > upper[k]))
            level = np.minimum(level, upper[k])
        else:
            n_clip = int(np.count_nonzero(level < lower[k]))
            level = np.maximum(level, lower[k])
        return level, n_floor, n_clip

    vals, Z, N_incr, M_incr, fit_se, floor_count, clip_count = _backward_lsmc(
        paths, driver, paths.D_vals[:, -1], clip, basis_degree, picard_iters,
        geometric=True,
    )
    n_pairs = paths.n_paths * paths.n_steps
    return OpportunitySolution(
        params=params,
        time_grid=paths.time_grid,
        L_vals=vals,
        Z_vals=Z,
        N_incr=N_incr,
        M_incr=M_incr,
        solver_tag="lsmc",
        basis_degree=basis_degree,
        picard_iters=picard_iters,
        floor_eps=floor_eps,
        consumption_mode=market.consumption_mode,
        floor_count=floor_count,
        bound_clip_count=clip_count,
        unreliable=floor_count > UNRELIABLE_FLOOR_FRACTION * n_pairs,
        fit_se=fit_se,
    )


def solve_exponential(market: MarketModel, paths_or_grid,
                      basis_degree: int = DEFAULT_BASIS_DEGREE,
                      picard_iters: int = DEFAULT_PICARD_ITERS,
                      floor_eps: float = DEFAULT_FLOOR_EPS) -> ExponentialSolution:
    """Exponential-utility value process: the opportunity BSDE at q = 1.

    Terminal value is the utility weight at the horizon (claim B = log D_T).
    Only defined without intermediate consumption.
    """
    if market.intermediate:
        raise ValidationError("the exponential problem has no intermediate consumption")

    if isinstance(paths_or_grid, PathBundle):
        paths = paths_or_grid
        _check_paths(market, paths)
        floor = floor_eps * market.k1
        cap = float(np.max(paths.D_vals[:, -1]))

        def driver(t, level, Z, lam, cov, D_k):
            v = lam + Z / level[:, None] if market.d > 0 else lam
            return 0.5 * level * _quadratic_form(v, cov)

        def clip(k, level):
            n_floor = int(np.count_nonzero(level < floor))
            level = np.maximum(level, floor)
            over = level > cap
            n_clip = int(np.count_nonzero(over))
            return np.minimum(level, cap), n_floor, n_clip

        vals, Z, N_incr, M_incr, fit_se, floor_count, clip_count = _backward_lsmc(
            paths, driver, paths.D_vals[:, -1], clip, basis_degree, picard_iters,
            geometric=True,
        )
        n_pairs = paths.n_paths * paths.n_steps
        return ExponentialSolution(
            time_grid=paths.time_grid,
            ell_vals=vals,
            z_vals=Z,
            n_incr=N_incr,
            M_incr=M_incr,
            claim_terminal=paths.D_vals[:, -1].copy(),
            solver_tag="lsmc",
            floor_count=floor_count,
            bound_clip_count=clip_count,
            unreliable=floor_count > UNRELIABLE_FLOOR_FRACTION * n_pairs,
            fit_se=fit_se,
        )

    # deterministic market, plain grid supplied
    if not market.deterministic:
        raise ValidationError("grid-based exponential solve requires a deterministic market")
    time_grid = np.asarray(paths_or_grid, dtype=float)
    theta2, weight = _deterministic_coeffs(market)

    def rhs(t, ell):
        return 0.5 * theta2(t) * ell

    vals = _integrate_backward(market, rhs, weight(market.T), time_grid,
                               floor_eps * market.k1)
    n_steps = len(time_grid) - 1
    return ExponentialSolution(
        time_grid=time_grid,
        ell_vals=vals[None, :],
        z_vals=np.zeros((1, n_steps + 1, market.d)),
        n_incr=np.zeros((1, n_steps)),
        M_incr=np.zeros((1, n_steps)),
        claim_terminal=np.array([weight(market.T)]),
        solver_tag="ode_exact",
        fit_se=np.zeros(n_steps + 1),
    )


def solve_eta(market: MarketModel, paths_or_grid,
              basis_degree: int = DEFAULT_BASIS_DEGREE) -> EtaProcess:
    """Remaining-utility-weight process eta_t = E[int_t^T D dmu° | F_t].

    Exact quadrature when the weight is deterministic; otherwise the same
    backward regression engine as the BSDE solvers (driver -D, no Picard
    dependence).
    """
    if isinstance(paths_or_grid, PathBundle):
        paths = paths_or_grid
        _check_paths(market, paths)
        if market.deterministic:
            vals = _eta_deterministic(market, paths.time_grid)
            n_steps = paths.n_steps
            return EtaProcess(
                time_grid=paths.time_grid,
                eta_vals=vals[None, :],
                Z_eta=np.zeros((1, n_steps + 1, market.d)),
                N_incr=np.zeros((1, n_steps)),
                M_incr=np.zeros((1, n_steps)),
                solver_tag="quadrature",
                fit_se=np.zeros(n_steps + 1),
            )
        mass = np.asarray(market.remaining_mass(paths.time_grid))
        lo = market.k1 * mass
        hi = market.k2 * mass

        if market.intermediate:
            def driver(t, level, Z, lam, cov, D_k):
                return -D_k
        else:
            def driver(t, level, Z, lam, cov, D_k):
                return np.zeros_like(level)

        def clip(k, level):
            n_out = int(np.count_nonzero((level < lo[k]) | (level > hi[k])))
            return np.clip(level, lo[k], hi[k]), 0, n_out

        vals, Z, N_incr, M_incr, fit_se, _, _ = _backward_lsmc(
            paths, driver, paths.D_vals[:, -1], clip, basis_degree, picard_iters=3,
            geometric=True,
        )
        return EtaProcess(
            time_grid=paths.time_grid,
            eta_vals=vals,
            Z_eta=Z,
            N_incr=N_incr,
            M_incr=M_incr,
            solver_tag="lsmc",
            fit_se=fit_se,
        )

    if not market.deterministic:
        raise ValidationError("grid-based eta solve requires deterministic coefficients")
    time_grid = np.asarray(paths_or_grid, dtype=float)
    vals = _eta_deterministic(market, time_grid)
    n_steps = len(time_grid) - 1
    return EtaProcess(
        time_grid=time_grid,
        eta_vals=vals[None, :],
        Z_eta=np.zeros((1, n_steps + 1, market.d)),
        N_incr=np.zeros((1, n_steps)),
        M_incr=np.zeros((1, n_steps)),
        solver_tag="quadrature",
        fit_se=np.zeros(n_steps + 1),
    )


def conditional_weight_integral(market: MarketModel, paths_or_grid, power: float = 1.0,
                                basis_degree: int = DEFAULT_BASIS_DEGREE) -> Array:
    """Conditional expectation of the remaining powered weight,
    E[int_t^T D^power dmu° | F_t], on the grid; shape (n, N+1).

    Uses the same regression basis as the solvers so that inequality checks
    share estimator bias with the quantities they compare against; exact
    quadrature in deterministic markets.
    """
    if isinstance(paths_or_grid, PathBundle):
        paths = paths_or_grid
        _check_paths(market, paths)
        if not market.deterministic:
            mass = np.asarray(market.remaining_mass(paths.time_grid))
            lo = market.k1**power * mass
            hi = market.k2**power * mass
            D_pow = paths.D_vals**power

            if market.intermediate:
                def driver(t, level, Z, lam, cov, D_k):
                    return -D_k**power
            else:
                def driver(t, level, Z, lam, cov, D_k):
                    return np.zeros_like(level)

            def clip(k, level):
                return np.clip(level, lo[k], hi[k]), 0, 0

            vals, *_ = _backward_lsmc(paths, driver, D_pow[:, -1], clip,
                                      basis_degree, picard_iters=3,
                                      geometric=True)
            return vals
        time_grid = paths.time_grid
    else:
        time_grid = np.asarray(paths_or_grid, dtype=float)
    if not market.deterministic:
        raise ValidationError("grid-based weight integral requires deterministic coefficients")
    _, weight = _deterministic_coeffs(market)
    T = market.T
    terminal = weight(T) ** power
    out = np.full(len(time_grid), terminal)
    if market.intermediate:
        for i, t in enumerate(time_grid):
            if t < T:
                integral, _ = quad(lambda s: weight(s) ** power, t, T,
                                   epsabs=1e-12, epsrel=1e-12)
                out[i] += integral
    return out[None, :]


def _eta_deterministic(market: MarketModel, time_grid: Array) -> Array:
    _, weight = _deterministic_coeffs(market)
    T = market.T
    terminal = weight(T)
    if not market.intermediate:
        return np.full(len(time_grid), terminal)
    out = np.empty(len(time_grid))
    for i, t in enumerate(time_grid):
        if t >= T:
            out[i] = terminal
        else:
            integral, _ = quad(weight, t, T, epsabs=1e-12, epsrel=1e-12)
            out[i] = integral + terminal
    return out


def _check_paths(market: MarketModel, paths: PathBundle) -> None:
    if paths.market is not market and paths.market.fingerprint != market.fingerprint:
        raise ValidationError("paths were simulated from a different market")
