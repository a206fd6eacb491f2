"""Command-line front end: experiment orchestration and file emission.

Subcommands:

* ``simulate`` -- build the market, simulate paths, write a per-step summary;
* ``solve``    -- solve the problem for one exponent, write the opportunity
  and strategy CSVs;
* ``sweep``    -- run a risk-aversion sweep, write the sweep report CSV;
* ``check``    -- run the inequality/diagnostic suite, write the pass/fail
  matrix, exit nonzero iff anything fails;
* ``report``   -- aggregate existing CSVs into a long-format table and render
  figures alongside.

Exit status: 0 success, 1 validation error, 2 solver failure,
3 property-check failure. The environment variable RRA_SEED provides a
default seed when neither ``--seed`` nor ``sim.seed`` is given (the flag
wins).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .asymptotics import check_exponential, check_neg_infinity, check_zero, sweep
from .config import RunConfig, load_run_config
from .errors import ResourceError, SolverError, ValidationError
from .market import MarketModel, PathBundle, RiskAversionParams, build_market, simulate
from .opportunity import solve_exponential, solve_lsmc, solve_ode
from .properties import (
    all_passed,
    check_comparison_dual,
    check_pure_investment_monotone,
    lambda_bmo_proxy,
    lemma_bound_rows,
    phi_curve,
    phi_monotone_rows,
    quad_var_diagnostic,
    quad_var_rows,
)
from .reporting import build_report
from .strategy import (
    consumption_fraction,
    dual_density,
    minimal_martingale_density,
    optimal_fraction,
    terminal_only_kappa,
    wealth,
)
from .tableio import fmt, write_checks_csv, write_csv, write_opportunity_csv, \
    write_strategy_csv, write_sweep_csv

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_SOLVER = 2
EXIT_CHECK = 3


def _resolve_seed(args, cfg: RunConfig) -> int:
    if args.seed is not None:
        return int(args.seed)
    if cfg.sim is not None and cfg.sim.seed is not None:
        return cfg.sim.seed
    env = os.environ.get("RRA_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ValidationError(f"RRA_SEED must be an integer, got {env!r}") from None
    raise ValidationError("no seed given: set sim.seed, pass --seed, or export RRA_SEED")


def _outdir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ValidationError(f"output directory not writable: {out} ({exc})") from None
    return out


def _simulate_from_config(cfg: RunConfig, seed: int) -> tuple[MarketModel, PathBundle]:
    market = build_market(cfg.model)
    if cfg.sim is None:
        raise ValidationError("config is missing required section 'sim'")
    paths = simulate(market, cfg.sim.n_paths, cfg.sim.n_steps, seed)
    return market, paths


def _format_p(p: float) -> str:
    return f"{p:g}"


def _cmd_simulate(args) -> int:
    cfg = load_run_config(args.config, require=("model", "sim"))
    seed = _resolve_seed(args, cfg)
    out = _outdir(args)
    market, paths = _simulate_from_config(cfg, seed)
    header = ["t"]
    for j in range(market.d):
        header += [f"mean_dR_{j + 1}", f"sd_dR_{j + 1}"]
    header += ["mean_D", "min_D", "max_D", "mean_factor", "sd_factor"]

    def rows():
        for k in range(paths.n_steps + 1):
            row = [paths.time_grid[k]]
            for j in range(market.d):
                if k < paths.n_steps:
                    row += [float(np.mean(paths.dR[:, k, j])),
                            float(np.std(paths.dR[:, k, j]))]
                else:
                    row += [float("nan"), float("nan")]
            row += [float(np.mean(paths.D_vals[:, k])),
                    float(np.min(paths.D_vals[:, k])),
                    float(np.max(paths.D_vals[:, k])),
                    float(np.mean(paths.factor_states[:, k])),
                    float(np.std(paths.factor_states[:, k]))]
            yield row

    write_csv(out / "paths_summary.csv", header, rows())
    print(f"wrote {out / 'paths_summary.csv'}")
    return EXIT_OK


def _solve_single(market, paths, params, cfg: RunConfig):
    if market.deterministic:
        return solve_ode(market, params, paths.time_grid,
                         floor_eps=cfg.solver.floor_eps)
    return solve_lsmc(market, params, paths,
                      basis_degree=cfg.solver.basis_degree,
                      picard_iters=cfg.solver.picard_iters,
                      floor_eps=cfg.solver.floor_eps)


def _cmd_solve(args) -> int:
    cfg = load_run_config(args.config, require=("model", "sim"))
    seed = _resolve_seed(args, cfg)
    out = _outdir(args)
    if args.p is not None:
        p = float(args.p)
    elif cfg.solver.p is not None:
        p = cfg.solver.p
    else:
        raise ValidationError("no exponent given: set solver.p or pass --p")
    params = RiskAversionParams(p)

    market, paths = _simulate_from_config(cfg, seed)
    sol = _solve_single(market, paths, params, cfg)
    if market.intermediate:
        kappa = consumption_fraction(sol, paths.D_vals)
    else:
        kappa = terminal_only_kappa(paths.n_paths, paths.n_steps + 1)
    pi = optimal_fraction(sol, market, paths)
    X = wealth(pi, kappa, paths, market.x0)
    dual = dual_density(sol, market, paths)

    tag = _format_p(p)
    write_opportunity_csv(out / f"opportunity_p{tag}.csv", sol)
    write_strategy_csv(out / f"strategy_p{tag}.csv", paths.time_grid, kappa, pi, X,
                       dual.Yn_vals)
    print(f"wrote {out / f'opportunity_p{tag}.csv'}")
    print(f"wrote {out / f'strategy_p{tag}.csv'}")
    if sol.unreliable:
        print(f"warning: solution flagged unreliable (floor_count={sol.floor_count})",
              file=sys.stderr)
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = load_run_config(args.config, require=("model", "sim", "sweep"))
    seed = _resolve_seed(args, cfg)
    out = _outdir(args)
    market = build_market(cfg.model)
    report = sweep(market, cfg.sweep.p_grid, cfg.sweep.limit_kind,
                   n_paths=cfg.sim.n_paths, n_steps=cfg.sim.n_steps, seed=seed,
                   basis_degree=cfg.solver.basis_degree,
                   picard_iters=cfg.solver.picard_iters,
                   floor_eps=cfg.solver.floor_eps)
    target = out / f"sweep_{cfg.sweep.limit_kind}.csv"
    write_sweep_csv(target, report)
    print(f"wrote {target}")
    failures = [r for r in report.records if r.flags.startswith("solver_error")]
    if failures:
        for r in failures:
            print(f"solver failure at p={r.p:g}: {r.flags}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def _cmd_check(args) -> int:
    cfg = load_run_config(args.config, require=("model", "sim", "sweep"))
    seed = _resolve_seed(args, cfg)
    out = _outdir(args)
    market, paths = _simulate_from_config(cfg, seed)
    p_grid = sorted(set(cfg.sweep.p_grid))
    if not p_grid:
        raise ValidationError("sweep.p_grid must be nonempty for 'check'")

    sols = {}
    for p in p_grid:
        params = RiskAversionParams(p)
        sols[p] = _solve_single(market, paths, params, cfg)

    reg_paths = None if market.deterministic else paths
    rows = []
    for p in p_grid:
        rows += lemma_bound_rows(sols[p], market)

    for pa, pb in zip(p_grid[:-1], p_grid[1:]):
        rows += check_comparison_dual(sols[pa], sols[pb], market, paths=reg_paths)
    negatives = [p for p in p_grid if p < 0]
    positives = [p for p in p_grid if p > 0]
    if negatives and positives:
        rows += check_comparison_dual(sols[min(negatives)], sols[min(positives)],
                                      market, paths=reg_paths)

    if len(negatives) >= 2:
        rows += check_pure_investment_monotone([sols[p] for p in negatives],
                                               market.consumption_mode, market=market)

    for p in negatives:
        rows += quad_var_rows(
            quad_var_diagnostic(sols[p], paths=reg_paths, market=market), p)
        rows += lambda_bmo_proxy(sols[p], market, paths=reg_paths)
    if positives:
        cap_source = max(positives)
        cap = float(np.max(sols[cap_source].L_vals))
        for p in positives:
            rows += quad_var_rows(
                quad_var_diagnostic(sols[p], paths=reg_paths, market=market,
                                    localizing_cap=cap), p)

    Yn = minimal_martingale_density(market, paths)
    curve = phi_curve(Yn, paths.time_grid, 0.0, market.T,
                      np.linspace(0.1, 0.9, 9))
    rows += phi_monotone_rows(curve)

    write_checks_csv(out / "checks.csv", rows)
    n_fail = sum(0 if r.passed else 1 for r in rows)
    print(f"wrote {out / 'checks.csv'} ({len(rows)} rows, {n_fail} failures)")
    return EXIT_OK if all_passed(rows) else EXIT_CHECK


def _cmd_report(args) -> int:
    written = build_report(args.out)
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rralab",
        description="Desk-scale laboratory for power-utility investment/consumption "
                    "and its risk-aversion limits.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, needs_config in (
        ("simulate", _cmd_simulate, True),
        ("solve", _cmd_solve, True),
        ("sweep", _cmd_sweep, True),
        ("check", _cmd_check, True),
        ("report", _cmd_report, False),
    ):
        sp = sub.add_parser(name)
        if needs_config:
            sp.add_argument("--config", required=True, help="path to the run config")
            sp.add_argument("--seed", type=int, default=None,
                            help="seed override (beats sim.seed and RRA_SEED)")
        sp.add_argument("--out", required=True, help="output directory")
        if name == "solve":
            sp.add_argument("--p", type=float, default=None,
                            help="utility exponent override")
        sp.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SolverError, ResourceError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
