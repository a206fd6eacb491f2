"""Config parsing, subcommand orchestration, exit codes, and file contracts."""

import csv
import os
import subprocess
import sys

import numpy as np
import pytest

import rralab as rl
from rralab.cli import main
from rralab.config import load_run_config, parse_config_text
from rralab.errors import ValidationError
from rralab.tableio import fmt, write_opportunity_csv

MERTON_CFG = """\
model.family = merton
model.T = 1.0
model.x0 = 1.0
model.consumption = terminal_only
model.mu_drift = 0.06
model.sigma = 0.2

sim.n_paths = 200
sim.n_steps = 10
sim.seed = 7

solver.p = -1.0

sweep.limit_kind = exponential
sweep.p_grid = -2,-4,-8
"""

NO_TRADE_CFG = """\
model.family = no_trade
model.T = 1.0
model.D = 1.0
model.consumption = intermediate

sim.n_paths = 64
sim.n_steps = 10
sim.seed = 3

sweep.limit_kind = zero_minus
sweep.p_grid = -0.4,-0.2,-0.1
"""


@pytest.fixture
def merton_cfg(tmp_path):
    path = tmp_path / "merton.cfg"
    path.write_text(MERTON_CFG)
    return path


class TestConfigParsing:
    def test_sections_and_comments(self):
        raw = parse_config_text("model.family = merton # trailing\n\n# comment\nsim.seed = 1\n")
        assert raw == {"model": {"family": "merton"}, "sim": {"seed": "1"}}

    def test_unknown_section_named(self):
        with pytest.raises(ValidationError, match="unknown section 'slover'"):
            parse_config_text("slover.p = 1\n")

    def test_unknown_key_named(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text(MERTON_CFG + "sim.n_legs = 4\n")
        with pytest.raises(ValidationError, match="sim.n_legs"):
            load_run_config(path)

    def test_missing_required_key_named(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("model.family = merton\nmodel.mu_drift = 0.06\n"
                        "model.sigma = 0.2\nsim.n_steps = 5\nsim.seed = 1\n")
        with pytest.raises(ValidationError, match="sim.n_paths"):
            load_run_config(path)

    def test_duplicate_key_rejected(self):
        with pytest.raises(ValidationError, match="duplicate"):
            parse_config_text("sim.seed = 1\nsim.seed = 2\n")

    def test_malformed_line(self):
        with pytest.raises(ValidationError, match="section.key"):
            parse_config_text("just some words\n")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ValidationError, match="not found"):
            load_run_config(tmp_path / "nope.cfg")


class TestNumberFormat:
    def test_seventeen_significant_digits(self):
        assert fmt(1.0) == "1"
        assert fmt(np.pi) == "3.1415926535897931"
        assert fmt(True) == "1"
        assert fmt(-3) == "-3"

    def test_roundtrip_exact(self):
        vals = [1 / 3, 1e-17, 123456.789, np.exp(-0.0225)]
        for v in vals:
            assert float(fmt(v)) == v


class TestSubcommands:
    def test_solve_writes_expected_files(self, merton_cfg, tmp_path):
        out = tmp_path / "out"
        assert main(["solve", "--config", str(merton_cfg), "--out", str(out)]) == 0
        assert (out / "opportunity_p-1.csv").is_file()
        assert (out / "strategy_p-1.csv").is_file()
        with open(out / "opportunity_p-1.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert rows[0]["path_id"] == "0"
        # ODE solution: single block, ordered by t, terminal L = D_T = 1
        assert float(rows[-1]["L"]) == 1.0
        with open(out / "strategy_p-1.csv") as fh:
            srows = list(csv.DictReader(fh))
        assert len(srows) == 200 * 11
        assert {"path_id", "t", "kappa", "pi_1", "X", "Y_norm"} <= set(srows[0])
        assert float(srows[0]["pi_1"]) == 0.75

    def test_solve_p_flag_overrides(self, merton_cfg, tmp_path):
        out = tmp_path / "out"
        assert main(["solve", "--config", str(merton_cfg), "--out", str(out),
                     "--p", "-2"]) == 0
        assert (out / "opportunity_p-2.csv").is_file()

    def test_solve_rejects_zero_exponent(self, merton_cfg, tmp_path, capsys):
        code = main(["solve", "--config", str(merton_cfg),
                     "--out", str(tmp_path / "o"), "--p", "0"])
        assert code == 1
        assert "exponent" in capsys.readouterr().err

    def test_sweep_and_check_and_report(self, merton_cfg, tmp_path):
        out = tmp_path / "out"
        assert main(["sweep", "--config", str(merton_cfg), "--out", str(out)]) == 0
        sweep_file = out / "sweep_exponential.csv"
        assert sweep_file.is_file()
        with open(sweep_file) as fh:
            rows = list(csv.DictReader(fh))
        assert [r["p"] for r in rows] == ["-8", "-4", "-2"]
        assert rows[0]["limit_kind"] == "exponential"

        assert main(["check", "--config", str(merton_cfg), "--out", str(out)]) == 0
        with open(out / "checks.csv") as fh:
            crows = list(csv.DictReader(fh))
        assert all(r["pass"] == "1" for r in crows)
        names = {r["check_name"] for r in crows}
        assert {"lemma_upper_bound", "comparison_dual_L", "comparison_dual_Lstar",
                "pure_investment_monotone", "quad_var_bound", "lambda_bmo_proxy",
                "phi_monotone"} <= names

        assert main(["report", "--out", str(out)]) == 0
        assert (out / "report_long.csv").is_file()
        assert (out / "sweep_exponential.png").is_file()
        assert (out / "checks.png").is_file()

    def test_no_trade_check_zero_slack(self, tmp_path):
        cfg = tmp_path / "nt.cfg"
        cfg.write_text(NO_TRADE_CFG)
        out = tmp_path / "out"
        assert main(["check", "--config", cfg.as_posix(), "--out", out.as_posix()]) == 0

    def test_report_without_inputs_fails_validation(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        assert main(["report", "--out", str(empty)]) == 1

    def test_check_failure_exit_code(self, merton_cfg, tmp_path, monkeypatch):
        import rralab.cli as cli_mod
        from rralab.properties import CheckRow

        def fake_rows(sol, market, n_se=3.0):
            return [CheckRow("lemma_upper_bound", -1.0, None, 0.0, 2.0, 1.0, 0.0, False)]

        monkeypatch.setattr(cli_mod, "lemma_bound_rows", fake_rows)
        code = main(["check", "--config", str(merton_cfg),
                     "--out", str(tmp_path / "o")])
        assert code == 3

    def test_solver_failure_exit_code(self, merton_cfg, tmp_path, monkeypatch):
        import rralab.cli as cli_mod
        from rralab.errors import SolverError

        def boom(*a, **k):
            raise SolverError("synthetic failure")

        monkeypatch.setattr(cli_mod, "solve_ode", boom)
        code = main(["solve", "--config", str(merton_cfg), "--out", str(tmp_path / "o")])
        assert code == 2


class TestDeterminism:
    def _run(self, cfg, out, threads, extra_env=None):
        env = dict(os.environ, OMP_NUM_THREADS=str(threads),
                   OPENBLAS_NUM_THREADS=str(threads))
        if extra_env:
            env.update(extra_env)
        res = subprocess.run(
            [sys.executable, "-m", "rralab.cli", "sweep", "--config", str(cfg),
             "--out", str(out)],
            capture_output=True, text=True, env=env)
        assert res.returncode == 0, res.stderr
        return (out / "sweep_exponential.csv").read_bytes()

    def test_byte_identical_across_thread_counts(self, merton_cfg, tmp_path):
        a = self._run(merton_cfg, tmp_path / "a", 1)
        b = self._run(merton_cfg, tmp_path / "b", 4)
        assert a == b

    def test_rra_seed_fallback_and_flag_precedence(self, tmp_path):
        cfg = tmp_path / "m.cfg"
        cfg.write_text(MERTON_CFG.replace("sim.seed = 7\n", ""))
        out1, out2, out3 = tmp_path / "o1", tmp_path / "o2", tmp_path / "o3"
        env = dict(os.environ, RRA_SEED="7")
        r1 = subprocess.run([sys.executable, "-m", "rralab.cli", "sweep",
                             "--config", str(cfg), "--out", str(out1)],
                            capture_output=True, text=True, env=env)
        assert r1.returncode == 0, r1.stderr
        # flag beats the environment
        r2 = subprocess.run([sys.executable, "-m", "rralab.cli", "sweep",
                             "--config", str(cfg), "--out", str(out2),
                             "--seed", "7"],
                            capture_output=True, text=True,
                            env=dict(env, RRA_SEED="99999"))
        assert r2.returncode == 0, r2.stderr
        assert (out1 / "sweep_exponential.csv").read_bytes() == \
            (out2 / "sweep_exponential.csv").read_bytes()
        # no seed anywhere: validation error
        r3 = subprocess.run([sys.executable, "-m", "rralab.cli", "sweep",
                             "--config", str(cfg), "--out", str(out3)],
                            capture_output=True, text=True,
                            env={k: v for k, v in os.environ.items()
                                 if k != "RRA_SEED"})
        assert r3.returncode == 1
        assert "seed" in r3.stderr


class TestCsvWriters:
    def test_opportunity_csv_contract(self, tmp_path):
        m = rl.build_market({"family": "merton", "mu_drift": 0.06, "sigma": 0.2,
                             "consumption": "terminal_only"})
        paths = rl.simulate(m, 8, 4, 1)
        sol = rl.solve_lsmc(m, rl.RiskAversionParams(-1.0), paths, basis_degree=0)
        target = tmp_path / "sol.csv"
        write_opportunity_csv(target, sol)
        text = target.read_text()
        assert "\r" not in text
        with open(target) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 8 * 5
        ids = [int(r["path_id"]) for r in rows]
        assert ids == sorted(ids)
        # terminal dN is the 0 placeholder
        assert rows[4]["dN"] == "0"
        assert float(rows[4]["L"]) == 1.0
