"""Risk-aversion sweeps and monotone-convergence checks of the limit theorems.

A sweep solves the control problem for every exponent on a common path
ensemble (common random numbers) and measures the distance of the optimal
consumption, investment, and dual value process from their limit objects:

* ``neg_infinity``: consumption fraction -> 1/(1+T-t), investment -> 0,
  dual value -> remaining consumption mass, wealth -> deterministic profile;
* ``exponential``: value process decreases pointwise to the exponential one
  and stays above it; scaled investment (1-p)*pi -> exponential amounts;
* ``zero_minus``/``zero_plus``: dual value -> eta, consumption -> D/eta,
  investment -> lambda + Z_eta/eta, with the excess hedging demand due to a
  nontrivial utility weight converging to Z_eta/eta.

The theorems are qualitative, so pass/fail is monotone error decrease with
10% slack plus a terminal comparison against the estimator noise floor
(block standard errors, with the irreducible finite-p part discounted at the
theoretical rate).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .errors import SolverError, ValidationError
from .market import MarketModel, PathBundle, RiskAversionParams, constant_weight_twin, simulate
from .opportunity import (
    DEFAULT_BASIS_DEGREE,
    DEFAULT_FLOOR_EPS,
    DEFAULT_PICARD_ITERS,
    EtaProcess,
    ExponentialSolution,
    OpportunitySolution,
    dual_opportunity,
    solve_eta,
    solve_exponential,
    solve_lsmc,
    solve_ode,
    value_estimate,
)
from .strategy import consumption_fraction, exponential_strategy, optimal_fraction, terminal_only_kappa, wealth

Array = NDArray[np.float64]

LIMIT_KINDS = ("neg_infinity", "zero_minus", "zero_plus", "exponential")

_N_BLOCKS = 16
_PAIR_SLACK = 1.1       # multiplicative slack for monotone error decrease
_TREND_SLACK = 1.25     # slack on the theoretical decay rate at the last point
_DEFAULT_ATOL = 1e-8    # resolution floor for exactly-solvable sweeps
_WEALTH_TOL = 0.02


@dataclass
class SweepRecord:
    """Per-exponent summary of one sweep; NaN marks non-applicable metrics."""

    p: float
    L0: float
    u_p: float
    err_kappa: float
    err_pi: float
    err_Lstar: float
    se_kappa: float
    se_pi: float
    se_Lstar: float
    err_wealth: float
    err_hedge: float
    se_hedge: float
    mono_violation: float  # exponential kind: max pointwise increase vs previous p
    lb_violation: float    # exponential kind: max pointwise shortfall below ell
    fit_noise: float
    floor_count: int
    flags: str


@dataclass
class SweepReport:
    limit_kind: str
    consumption_mode: str
    market_fingerprint: str
    seed: int
    n_paths: int
    n_steps: int
    p_grid: list[float]
    records: list[SweepRecord] = field(default_factory=list)
    eta: EtaProcess | None = None
    exp_sol: ExponentialSolution | None = None
    exp_fit_noise: float = 0.0

    def record_for(self, p: float) -> SweepRecord:
        for rec in self.records:
            if rec.p == p:
                return rec
        raise KeyError(p)


@dataclass
class CheckResult:
    name: str
    passed: bool
    diagnostics: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:  # pragma: no cover - convenience
        return self.passed


# --------------------------------------------------------------------------
# error metrics
# --------------------------------------------------------------------------

def _block_stats(per_path: Array, reducer) -> tuple[float, float]:
    """Metric value plus a block standard error over the path axis."""
    n = per_path.shape[0]
    value = float(reducer(per_path))
    if n < 2 * _N_BLOCKS:
        return value, 0.0
    edges = np.linspace(0, n, _N_BLOCKS + 1, dtype=int)
    blocks = [reducer(per_path[a:b]) for a, b in zip(edges[:-1], edges[1:])]
    se = float(np.std(blocks, ddof=1) / math.sqrt(_N_BLOCKS))
    return value, se


def max_grid_mean_abs(diff: Array) -> tuple[float, float]:
    """Max over the grid of the mean absolute deviation across paths."""
    def reducer(block: Array) -> float:
        return float(np.max(np.mean(np.abs(block), axis=0)))

    return _block_stats(np.atleast_2d(diff), reducer)


def grid_l2_under_M(diff: Array, market: MarketModel, paths: PathBundle) -> tuple[float, float]:
    """Grid L2 norm under d<M>: sqrt(E sum_k diff' Sigma diff dt)."""
    n, n_grid, d = paths.n_paths, paths.n_steps + 1, market.d
    diff = np.broadcast_to(diff, (n, n_grid, d))
    per_path = np.zeros(n)
    dt = paths.dt
    for k in range(paths.n_steps):
        sig = market.sigma_at(paths.time_grid[k], paths.factor_states[:, k], n)
        cov = np.einsum("nij,nkj->nik", sig, sig, optimize=False)
        per_path += np.einsum("ni,nij,nj->n", diff[:, k, :], cov, diff[:, k, :],
                              optimize=False) * dt

    def reducer(block: Array) -> float:
        return float(math.sqrt(max(np.mean(block), 0.0)))

    return _block_stats(per_path, reducer)


# --------------------------------------------------------------------------
# sweep
# --------------------------------------------------------------------------

def _convergence_order(limit_kind: str, p_grid: list[float]) -> list[float]:
    if limit_kind in ("neg_infinity", "exponential"):
        return sorted(p_grid, reverse=True)  # toward -inf
    return sorted(p_grid, key=abs, reverse=True)  # toward 0


def _nan_record(p: float, msg: str) -> SweepRecord:
    nan = float("nan")
    return SweepRecord(p=p, L0=nan, u_p=nan, err_kappa=nan, err_pi=nan,
                       err_Lstar=nan, se_kappa=0.0, se_pi=0.0, se_Lstar=0.0,
                       err_wealth=nan, err_hedge=nan, se_hedge=0.0,
                       mono_violation=nan, lb_violation=nan, fit_noise=0.0,
                       floor_count=0, flags=f"solver_error:{msg}")


def sweep(market: MarketModel, p_grid, limit_kind: str, n_paths: int, n_steps: int,
          seed: int, basis_degree: int = DEFAULT_BASIS_DEGREE,
          picard_iters: int = DEFAULT_PICARD_ITERS,
          floor_eps: float = DEFAULT_FLOOR_EPS) -> SweepReport:
    """Solve the problem for every p on one path ensemble and tabulate errors."""
    p_list = [float(p) for p in np.atleast_1d(np.asarray(p_grid, dtype=float))]
    if not p_list:
        raise ValidationError("p_grid must be nonempty")
    for p in p_list:
        RiskAversionParams(p)  # validates the range
    if len(set(p_list)) != len(p_list):
        raise ValidationError("p_grid entries must be distinct")
    if limit_kind not in LIMIT_KINDS:
        raise ValidationError(f"limit_kind must be one of {LIMIT_KINDS}, got '{limit_kind}'")
    if limit_kind == "exponential" and market.intermediate:
        raise ValidationError("the exponential limit requires a terminal-only market")

    paths = simulate(market, n_paths, n_steps, seed)
    grid = paths.time_grid
    mass = np.asarray(market.remaining_mass(grid))

    report = SweepReport(
        limit_kind=limit_kind,
        consumption_mode=market.consumption_mode,
        market_fingerprint=repr(market.fingerprint),
        seed=int(seed),
        n_paths=int(n_paths),
        n_steps=int(n_steps),
        p_grid=sorted(p_list),
    )

    zero_kind = limit_kind in ("zero_minus", "zero_plus")
    eta = None
    lam_grid = None
    if zero_kind:
        eta = solve_eta(market, paths if not market.deterministic else grid,
                        basis_degree=basis_degree)
        report.eta = eta
    exp_sol = None
    theta_hat = None
    if limit_kind == "exponential":
        exp_sol = (solve_exponential(market, grid) if market.deterministic
                   else solve_exponential(market, paths, basis_degree=basis_degree,
                                          picard_iters=picard_iters, floor_eps=floor_eps))
        report.exp_sol = exp_sol
        report.exp_fit_noise = float(np.max(exp_sol.fit_se)) if exp_sol.fit_se is not None else 0.0
        theta_hat = exponential_strategy(exp_sol, market,
                                         None if market.deterministic else paths)

    twin_market = twin_paths = None
    if zero_kind and market.k1 != market.k2:
        twin_market = constant_weight_twin(market)
        twin_paths = simulate(twin_market, n_paths, n_steps, seed)

    prev_L = None
    for p in _convergence_order(limit_kind, p_list):
        params = RiskAversionParams(p)
        try:
            rec, L_now = _solve_one(market, params, paths, mass, limit_kind, eta,
                                    exp_sol, theta_hat, prev_L, twin_market,
                                    twin_paths, basis_degree, picard_iters, floor_eps)
        except SolverError as exc:
            report.records.append(_nan_record(p, str(exc)))
            prev_L = None
            continue
        report.records.append(rec)
        prev_L = L_now

    report.records.sort(key=lambda r: r.p)
    return report


def _solve_one(market, params, paths, mass, limit_kind, eta, exp_sol, theta_hat,
               prev_L, twin_market, twin_paths, basis_degree, picard_iters,
               floor_eps):
    grid = paths.time_grid
    nan = float("nan")
    if market.deterministic:
        sol = solve_ode(market, params, grid, floor_eps=floor_eps)
    else:
        sol = solve_lsmc(market, params, paths, basis_degree=basis_degree,
                         picard_iters=picard_iters, floor_eps=floor_eps)
    pi_hat = optimal_fraction(sol, market, None if market.deterministic else paths)
    Lstar = dual_opportunity(sol)
    fit_noise = float(np.max(sol.fit_se)) if sol.fit_se is not None else 0.0

    if market.intermediate:
        kappa_hat = consumption_fraction(sol, paths.D_vals if sol.n_paths > 1
                                         else paths.D_vals[:1])
        kappa_full = consumption_fraction(sol, paths.D_vals)
    else:
        kappa_hat = None
        kappa_full = terminal_only_kappa(paths.n_paths, len(grid))

    err_kappa = se_kappa = nan
    err_pi = se_pi = nan
    err_Lstar = se_Lstar = nan
    err_hedge = se_hedge = nan
    mono_violation = lb_violation = nan

    if limit_kind in ("neg_infinity",):
        if kappa_hat is not None:
            err_kappa, se_kappa = max_grid_mean_abs(kappa_hat - 1.0 / mass)
        err_pi, se_pi = grid_l2_under_M(pi_hat, market, paths)
        err_Lstar, se_Lstar = max_grid_mean_abs(Lstar - mass)
    elif limit_kind == "exponential":
        err_pi, se_pi = grid_l2_under_M((1.0 - params.p) * pi_hat - theta_hat,
                                        market, paths)
        err_Lstar, se_Lstar = max_grid_mean_abs(sol.L_vals - exp_sol.ell_vals)
        lb_violation = float(np.max(exp_sol.ell_vals - sol.L_vals))
        if prev_L is not None:
            # toward -inf the value process must not increase pointwise
            mono_violation = float(np.max(sol.L_vals - prev_L))
    else:  # zero_minus / zero_plus
        eta_vals = eta.eta_vals
        if kappa_hat is not None:
            target = (paths.D_vals / np.broadcast_to(eta_vals, paths.D_vals.shape)).copy()
            target[:, -1] = 1.0
            err_kappa, se_kappa = max_grid_mean_abs(kappa_hat - target)
        lam = _lambda_on_grid(market, paths)
        pi_limit = lam + eta.Z_eta / eta_vals[..., None]
        pi_full = np.broadcast_to(pi_hat, (paths.n_paths,) + pi_hat.shape[1:]) \
            if pi_hat.shape[0] == 1 else pi_hat
        err_pi, se_pi = grid_l2_under_M(pi_full - pi_limit, market, paths)
        err_Lstar, se_Lstar = max_grid_mean_abs(Lstar - eta_vals)
        if twin_market is not None:
            twin_sol = solve_lsmc(twin_market, params, twin_paths,
                                  basis_degree=basis_degree,
                                  picard_iters=picard_iters, floor_eps=floor_eps)
            twin_pi = optimal_fraction(twin_sol, twin_market, twin_paths)
            hedge = pi_full - twin_pi - eta.Z_eta / eta_vals[..., None]
            err_hedge, se_hedge = grid_l2_under_M(hedge, market, paths)

    X_hat = wealth(pi_hat, kappa_full, paths, market.x0)
    if market.intermediate:
        X_limit = market.x0 * (1.0 + market.T - grid) / (1.0 + market.T)
    else:
        X_limit = np.full(len(grid), market.x0)
    err_wealth = float(np.max(np.abs(np.mean(X_hat, axis=0) / X_limit - 1.0)))

    rec = SweepRecord(
        p=params.p,
        L0=sol.L0,
        u_p=value_estimate(sol, market.x0),
        err_kappa=err_kappa, err_pi=err_pi, err_Lstar=err_Lstar,
        se_kappa=se_kappa, se_pi=se_pi, se_Lstar=se_Lstar,
        err_wealth=err_wealth, err_hedge=err_hedge, se_hedge=se_hedge,
        mono_violation=mono_violation, lb_violation=lb_violation,
        fit_noise=fit_noise,
        floor_count=sol.floor_count,
        flags="unreliable" if sol.unreliable else "ok",
    )
    return rec, sol.L_vals


def _lambda_on_grid(market: MarketModel, paths: PathBundle) -> Array:
    out = np.empty((paths.n_paths, paths.n_steps + 1, market.d))
    for k in range(paths.n_steps + 1):
        out[:, k, :] = market.lambda_at(paths.time_grid[k],
                                        paths.factor_states[:, k], paths.n_paths)
    return out


# --------------------------------------------------------------------------
# checkers
# --------------------------------------------------------------------------

def _ordered_records(report: SweepReport) -> list[SweepRecord]:
    order = _convergence_order(report.limit_kind, [r.p for r in report.records])
    return [report.record_for(p) for p in order]


def _decay_factor(limit_kind: str, p_prev: float, p_last: float) -> float:
    """Theoretical decrease of the leading error term on the last grid step."""
    if limit_kind in ("neg_infinity", "exponential"):
        b_prev = 1.0 / (1.0 - p_prev)
        b_last = 1.0 / (1.0 - p_last)
        return b_last / b_prev
    return abs(p_last) / abs(p_prev)


def _check_error_column(records, getter, se_getter, limit_kind, label, atol, diags) -> bool:
    errs = [getter(r) for r in records]
    ses = [se_getter(r) for r in records]
    ok = True
    if any(not math.isfinite(e) for e in errs):
        diags.append(f"{label}: missing or failed solves in the column")
        return False
    for i in range(1, len(errs)):
        allowed = max(_PAIR_SLACK * errs[i - 1], 3.0 * ses[i] + atol)
        if errs[i] > allowed:
            diags.append(
                f"non-decreasing error in {label}: {errs[i - 1]:.3e} -> {errs[i]:.3e} "
                f"(p={records[i].p:g})"
            )
            ok = False
    factor = _decay_factor(limit_kind, records[-2].p, records[-1].p)
    floor = max(_TREND_SLACK * factor * errs[-2], 3.0 * ses[-1] + atol)
    if errs[-1] > floor:
        diags.append(
            f"{label} did not reach the noise floor: final {errs[-1]:.3e} > {floor:.3e}"
        )
        ok = False
    return ok


def check_neg_infinity(report: SweepReport, atol: float = _DEFAULT_ATOL) -> CheckResult:
    """High-risk-aversion limit: errors decrease to the noise floor."""
    if report.limit_kind != "neg_infinity":
        raise ValidationError(f"expected a neg_infinity report, got '{report.limit_kind}'")
    if len(report.records) < 3:
        raise ValidationError("need at least 3 exponents to judge a trend")
    recs = _ordered_records(report)
    diags: list[str] = []
    ok = True
    if report.consumption_mode == "intermediate":
        ok &= _check_error_column(recs, lambda r: r.err_kappa, lambda r: r.se_kappa,
                                  report.limit_kind, "kappa vs 1/(1+T-t)", atol, diags)
    ok &= _check_error_column(recs, lambda r: r.err_pi, lambda r: r.se_pi,
                              report.limit_kind, "pi vs 0", atol, diags)
    ok &= _check_error_column(recs, lambda r: r.err_Lstar, lambda r: r.se_Lstar,
                              report.limit_kind, "dual value vs remaining mass", atol, diags)
    if report.consumption_mode == "intermediate":
        w = recs[-1].err_wealth
        if not (math.isfinite(w) and w <= _WEALTH_TOL):
            diags.append(f"limit wealth off by {w:.3e} > {_WEALTH_TOL}")
            ok = False
    for r in recs:
        if r.flags != "ok":
            diags.append(f"p={r.p:g} flagged: {r.flags}")
            ok = False
    return CheckResult("neg_infinity", bool(ok), diags)


def check_exponential(report: SweepReport, exp_sol: ExponentialSolution,
                      atol: float = _DEFAULT_ATOL) -> CheckResult:
    """High-risk-aversion limit toward the exponential-utility problem."""
    if report.limit_kind != "exponential":
        raise ValidationError(f"expected an exponential report, got '{report.limit_kind}'")
    if report.consumption_mode == "intermediate":
        raise ValidationError("exponential check applies to terminal-only markets")
    recs = _ordered_records(report)
    diags: list[str] = []
    ok = True
    for i, r in enumerate(recs):
        tol = atol + 3.0 * (r.fit_noise + report.exp_fit_noise)
        if i > 0 and math.isfinite(r.mono_violation) and r.mono_violation > tol + 3.0 * recs[i - 1].fit_noise:
            diags.append(
                f"value process not pointwise nonincreasing toward -inf at p={r.p:g}: "
                f"violation {r.mono_violation:.3e}"
            )
            ok = False
        if math.isfinite(r.lb_violation) and r.lb_violation > tol:
            diags.append(
                f"value process drops below the exponential one at p={r.p:g}: "
                f"shortfall {r.lb_violation:.3e}"
            )
            ok = False
    if len(recs) >= 2:
        ok &= _check_error_column(recs, lambda r: r.err_pi, lambda r: r.se_pi,
                                  report.limit_kind, "(1-p)*pi vs exponential amounts",
                                  atol, diags)
    return CheckResult("exponential", bool(ok), diags)


def check_zero(report: SweepReport, eta: EtaProcess,
               atol: float = _DEFAULT_ATOL) -> CheckResult:
    """Low-risk-aversion limit: dual value to eta, strategies to the log-optimal."""
    if report.limit_kind not in ("zero_minus", "zero_plus"):
        raise ValidationError(f"expected a zero-limit report, got '{report.limit_kind}'")
    if len(report.records) < 2:
        raise ValidationError("need at least 2 exponents to judge a trend")
    recs = _ordered_records(report)
    diags: list[str] = []
    ok = True
    ok &= _check_error_column(recs, lambda r: r.err_Lstar, lambda r: r.se_Lstar,
                              report.limit_kind, "dual value vs eta", atol, diags)
    if report.consumption_mode == "intermediate":
        ok &= _check_error_column(recs, lambda r: r.err_kappa, lambda r: r.se_kappa,
                                  report.limit_kind, "kappa vs D/eta", atol, diags)
    ok &= _check_error_column(recs, lambda r: r.err_pi, lambda r: r.se_pi,
                              report.limit_kind, "pi vs lambda + Z_eta/eta", atol, diags)
    if any(math.isfinite(r.err_hedge) for r in recs):
        ok &= _check_error_column(recs, lambda r: r.err_hedge, lambda r: r.se_hedge,
                                  report.limit_kind, "excess hedging vs Z_eta/eta",
                                  atol, diags)
    if report.limit_kind == "zero_plus":
        eta0 = eta.eta0
        for r in recs:
            if not math.isfinite(r.u_p):
                diags.append(f"value estimate not finite at p={r.p:g}")
                ok = False
            elif abs(r.L0 - eta0) > 0.5 * eta0:
                diags.append(
                    f"value estimates unstable at p={r.p:g}: L0={r.L0:.4g} vs eta0={eta0:.4g}"
                )
                ok = False
    for r in recs:
        if r.flags != "ok":
            diags.append(f"p={r.p:g} flagged: {r.flags}")
            ok = False
    return CheckResult(report.limit_kind, bool(ok), diags)
