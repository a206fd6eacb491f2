"""Desk-scale laboratory for power-utility investment/consumption and its
risk-aversion limits: market simulation, value-process solvers (exact ODE and
least-squares Monte Carlo), optimal-strategy maps, asymptotic sweeps, and
inequality diagnostics."""

from .asymptotics import (
    CheckResult,
    SweepRecord,
    SweepReport,
    check_exponential,
    check_neg_infinity,
    check_zero,
    sweep,
)
from .errors import ResourceError, SolverError, ValidationError
from .market import (
    FactorSpec,
    MarketModel,
    PathBundle,
    RiskAversionParams,
    build_market,
    constant_weight_twin,
    simulate,
    uniform_grid,
)
from .opportunity import (
    EtaProcess,
    ExponentialSolution,
    OpportunitySolution,
    conditional_weight_integral,
    dual_opportunity,
    solve_eta,
    solve_exponential,
    solve_lsmc,
    solve_ode,
    value_estimate,
)
from .properties import (
    CheckRow,
    PhiCurve,
    QuadVarDiagnostic,
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
from .strategy import (
    DualDensity,
    StrategyProfile,
    consumption_fraction,
    dual_density,
    exponential_strategy,
    minimal_martingale_density,
    optimal_fraction,
    terminal_only_kappa,
    wealth,
)

__version__ = "0.1.0"
