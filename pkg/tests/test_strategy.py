"""Feedback maps, wealth dynamics, and the dual density."""

import numpy as np
import pytest

import rralab as rl
from rralab.errors import SolverError, ValidationError

NO_TRADE_INT = {"family": "no_trade", "T": 1, "D": 1, "consumption": "intermediate"}
MERTON_TO = {"family": "merton", "mu_drift": 0.06, "sigma": 0.2,
             "consumption": "terminal_only"}
MERTON_INT = dict(MERTON_TO, consumption="intermediate")


class TestConsumptionFraction:
    def test_unit_ratio_gives_unit_fraction(self):
        m = rl.build_market(NO_TRADE_INT)
        paths = rl.simulate(m, 4, 6, 1)
        sol = rl.solve_ode(m, rl.RiskAversionParams(-1.0), paths.time_grid)
        kappa = rl.consumption_fraction(sol, sol.L_vals.copy())  # D := L pointwise
        np.testing.assert_allclose(kappa, 1.0)

    def test_no_trade_closed_form(self):
        # (1/L)^beta = (1+T-t)^{-1}; at t=0 with T=1 this is 0.5
        m = rl.build_market(NO_TRADE_INT)
        paths = rl.simulate(m, 8, 10, 1)
        sol = rl.solve_ode(m, rl.RiskAversionParams(-1.0), paths.time_grid)
        kappa = rl.consumption_fraction(sol, paths.D_vals)
        expected = 1.0 / (2.0 - paths.time_grid)
        expected = np.broadcast_to(expected, kappa.shape).copy()
        expected[:, -1] = 1.0
        np.testing.assert_allclose(kappa, expected, rtol=1e-8)
        assert kappa[0, 0] == pytest.approx(0.5, rel=1e-9)

    def test_terminal_convention(self):
        m = rl.build_market(NO_TRADE_INT)
        paths = rl.simulate(m, 4, 5, 2)
        sol = rl.solve_ode(m, rl.RiskAversionParams(-2.0), paths.time_grid)
        kappa = rl.consumption_fraction(sol, paths.D_vals)
        assert np.all(kappa[:, -1] == 1.0)

    def test_rejects_terminal_only(self):
        m = rl.build_market(MERTON_TO)
        paths = rl.simulate(m, 4, 5, 2)
        sol = rl.solve_ode(m, rl.RiskAversionParams(-1.0), paths.time_grid)
        with pytest.raises(ValidationError, match="intermediate"):
            rl.consumption_fraction(sol, paths.D_vals)


class TestOptimalFraction:
    def test_merton_constant_fraction(self):
        # beta*lambda = 0.5*1.5 = 0.75; cross-check drift/((1-p) sigma^2)
        m = rl.build_market(MERTON_TO)
        sol = rl.solve_ode(m, rl.RiskAversionParams(-1.0), rl.uniform_grid(1.0, 10))
        pi = rl.optimal_fraction(sol, m)
        assert np.allclose(pi, 0.75)
        assert 0.06 / (2.0 * 0.04) == pytest.approx(0.75)

    def test_zero_price_of_risk(self):
        m = rl.build_market({"family": "merton", "mu_drift": 0.0, "sigma": 0.2,
                             "consumption": "terminal_only"})
        sol = rl.solve_ode(m, rl.RiskAversionParams(-1.0), rl.uniform_grid(1.0, 10))
        assert np.all(rl.optimal_fraction(sol, m) == 0.0)

    def test_broadcasts_over_paths(self):
        m = rl.build_market(MERTON_TO)
        paths = rl.simulate(m, 32, 10, 3)
        sol = rl.solve_ode(m, rl.RiskAversionParams(-1.0), paths.time_grid)
        pi = rl.optimal_fraction(sol, m, paths)
        assert pi.shape == (32, 11, 1)


class TestExponentialStrategy:
    def test_merton_amounts(self):
        m = rl.build_market(MERTON_TO)
        exp_sol = rl.solve_exponential(m, rl.uniform_grid(1.0, 10))
        amounts = rl.exponential_strategy(exp_sol, m)
        np.testing.assert_allclose(amounts, 1.5, rtol=1e-12)

    def test_zero_driver(self):
        m = rl.build_market({"family": "merton", "mu_drift": 0.0, "sigma": 0.2,
                             "consumption": "terminal_only"})
        exp_sol = rl.solve_exponential(m, rl.uniform_grid(1.0, 10))
        np.testing.assert_allclose(exp_sol.ell_vals, 1.0, rtol=1e-12)
        assert np.all(rl.exponential_strategy(exp_sol, m) == 0.0)

    def test_rejects_intermediate(self):
        m = rl.build_market(MERTON_INT)
        exp_like = rl.solve_exponential(rl.build_market(MERTON_TO),
                                        rl.uniform_grid(1.0, 4))
        with pytest.raises(ValidationError):
            rl.exponential_strategy(exp_like, m)


class TestWealth:
    def test_constant_consumption_rate_profile(self):
        # kappa = 1/(1+T-t) consumes at constant rate: X_t = x0(1+T-t)/(1+T)
        m = rl.build_market(NO_TRADE_INT)
        paths = rl.simulate(m, 4, 50, 5)
        kappa = np.broadcast_to(1.0 / (2.0 - paths.time_grid), (4, 51))
        pi = np.zeros((4, 51, 0))
        X = rl.wealth(pi, kappa, paths, 1.0)
        exact = (2.0 - paths.time_grid) / 2.0
        assert np.max(np.abs(X / exact - 1.0)) < 2e-3
        assert X[0, -1] == pytest.approx(0.5, rel=2e-3)
        # left-endpoint quadrature error halves with the step
        paths2 = rl.simulate(m, 4, 100, 5)
        kappa2 = np.broadcast_to(1.0 / (2.0 - paths2.time_grid), (4, 101))
        X2 = rl.wealth(np.zeros((4, 101, 0)), kappa2, paths2, 1.0)
        err1 = abs(X[0, -1] - 0.5)
        err2 = abs(X2[0, -1] - 0.5)
        assert err2 < 0.6 * err1

    def test_no_action_keeps_capital(self):
        m = rl.build_market(NO_TRADE_INT)
        paths = rl.simulate(m, 4, 8, 5)
        X = rl.wealth(np.zeros((4, 9, 0)), np.zeros((4, 9)), paths, 1.0)
        np.testing.assert_array_equal(X, 1.0)

    def test_scaling_law(self):
        m = rl.build_market(MERTON_INT)
        paths = rl.simulate(m, 16, 10, 7)
        sol = rl.solve_ode(m, rl.RiskAversionParams(-1.0), paths.time_grid)
        kappa = rl.consumption_fraction(sol, paths.D_vals)
        pi = rl.optimal_fraction(sol, m, paths)
        X1 = rl.wealth(pi, kappa, paths, 1.0)
        X2 = rl.wealth(pi, kappa, paths, 2.0)
        np.testing.assert_allclose(X2, 2.0 * X1, rtol=1e-12)
        assert np.all(X1 > 0.0)

    def test_overflow_reported_with_location(self):
        m = rl.build_market(MERTON_TO)
        paths = rl.simulate(m, 4, 8, 7)
        pi = np.full((4, 9, 1), 1e6)
        with pytest.raises(SolverError, match=r"path \d+, step \d+"):
            rl.wealth(pi, np.zeros((4, 9)), paths, 1e300)


class TestDualDensity:
    def test_density_normalized_and_positive(self):
        m = rl.build_market(MERTON_TO)
        paths = rl.simulate(m, 30000, 20, 9)
        sol = rl.solve_ode(m, rl.RiskAversionParams(-1.0), paths.time_grid)
        dd = rl.dual_density(sol, m, paths)
        assert np.all(dd.Yn_vals[:, 0] == 1.0)
        assert np.all(dd.Yn_vals > 0.0)
        term = dd.Yn_vals[:, -1]
        se = term.std() / np.sqrt(len(term))
        assert abs(term.mean() - 1.0) <= 4.0 * se
        # y0 = L0 * x0^(p-1)
        assert dd.y0 == pytest.approx(sol.L0, rel=1e-12)

    def test_stationary_in_p_for_deterministic_market(self):
        m = rl.build_market(MERTON_TO)
        paths = rl.simulate(m, 64, 10, 9)
        dens = []
        for p in (-1.0, -8.0):
            sol = rl.solve_ode(m, rl.RiskAversionParams(p), paths.time_grid)
            dens.append(rl.dual_density(sol, m, paths).Yn_vals)
        np.testing.assert_array_equal(dens[0], dens[1])

    def test_matches_minimal_density_when_orthogonal_part_vanishes(self):
        m = rl.build_market(MERTON_TO)
        paths = rl.simulate(m, 64, 10, 9)
        sol = rl.solve_ode(m, rl.RiskAversionParams(-1.0), paths.time_grid)
        dd = rl.dual_density(sol, m, paths)
        np.testing.assert_allclose(dd.Yn_vals,
                                   rl.minimal_martingale_density(m, paths),
                                   rtol=1e-12)

    def test_small_p_density_approaches_minimal_density(self):
        cfg = {"family": "one_factor", "T": 1.0, "consumption": "intermediate",
               "sigma": 0.2, "lambda_bar": 1.0, "lambda_gamma": 0.5,
               "factor_speed": 1.0, "factor_vol": 0.5, "rho": -0.3}
        m = rl.build_market(cfg)
        paths = rl.simulate(m, 20000, 25, 31)
        ref = rl.minimal_martingale_density(m, paths)[:, -1]
        gaps = []
        for p in (-0.4, -0.05):
            sol = rl.solve_lsmc(m, rl.RiskAversionParams(p), paths)
            dd = rl.dual_density(sol, m, paths)
            gaps.append(float(np.mean((dd.Yn_vals[:, -1] - ref) ** 2)))
        assert gaps[1] < 0.25 * gaps[0]
