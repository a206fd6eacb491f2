"""Delimited output with a bit-reproducible number format.

All CSVs use 17-significant-digit decimal formatting, '.' separator, LF line
endings, and deterministic row order, so identical runs produce identical
bytes.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .asymptotics import SweepReport
from .opportunity import OpportunitySolution
from .properties import CheckRow


def fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return "%.17g" % float(value)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    path = Path(path)
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def write_opportunity_csv(path, sol: OpportunitySolution) -> None:
    """Columns (path_id, t, L, Z_1..Z_d, dN), rows ordered by (path_id, t).

    dN carries the orthogonal-martingale increment over [t, t+dt); the
    terminal row carries 0.
    """
    n, n_grid = sol.L_vals.shape
    d = sol.Z_vals.shape[2]
    header = ["path_id", "t", "L"] + [f"Z_{j + 1}" for j in range(d)] + ["dN"]

    def rows():
        for i in range(n):
            for k in range(n_grid):
                dn = sol.N_incr[i, k] if k < n_grid - 1 else 0.0
                yield (i, sol.time_grid[k], sol.L_vals[i, k],
                       *sol.Z_vals[i, k, :], dn)

    write_csv(path, header, rows())


def write_strategy_csv(path, time_grid, kappa, pi, X, Yn) -> None:
    """Columns (path_id, t, kappa, pi_1..pi_d, X, Y_norm), same format contract."""
    kappa = np.atleast_2d(kappa)
    X = np.atleast_2d(X)
    Yn = np.atleast_2d(Yn)
    n, n_grid = X.shape
    pi = np.broadcast_to(pi, (n, n_grid, pi.shape[-1]))
    kappa = np.broadcast_to(kappa, (n, n_grid))
    Yn = np.broadcast_to(Yn, (n, n_grid))
    d = pi.shape[-1]
    header = ["path_id", "t", "kappa"] + [f"pi_{j + 1}" for j in range(d)] + ["X", "Y_norm"]

    def rows():
        for i in range(n):
            for k in range(n_grid):
                yield (i, time_grid[k], kappa[i, k], *pi[i, k, :], X[i, k], Yn[i, k])

    write_csv(path, header, rows())


SWEEP_COLUMNS = [
    "limit_kind", "p", "L0", "u_p", "err_kappa", "err_pi", "err_Lstar",
    "pass_flags", "se_kappa", "se_pi", "se_Lstar", "err_wealth", "err_hedge",
    "se_hedge", "mono_violation", "lb_violation", "fit_noise", "floor_count",
    "seed", "n_paths", "n_steps",
]


def write_sweep_csv(path, report: SweepReport) -> None:
    def rows():
        for r in sorted(report.records, key=lambda r: r.p):
            yield (report.limit_kind, r.p, r.L0, r.u_p, r.err_kappa, r.err_pi,
                   r.err_Lstar, r.flags, r.se_kappa, r.se_pi, r.se_Lstar,
                   r.err_wealth, r.err_hedge, r.se_hedge, r.mono_violation,
                   r.lb_violation, r.fit_noise, r.floor_count, report.seed,
                   report.n_paths, report.n_steps)

    write_csv(path, SWEEP_COLUMNS, rows())


CHECK_COLUMNS = ["check_name", "p", "p0_or_blank", "t", "lhs", "rhs", "slack", "pass"]


def write_checks_csv(path, rows: Iterable[CheckRow]) -> None:
    def encode():
        for r in rows:
            p0 = "" if r.p0 is None else fmt(r.p0)
            p = "" if isinstance(r.p, float) and math.isnan(r.p) else fmt(r.p)
            yield (r.check, p, p0, r.t, r.lhs, r.rhs, r.slack, r.passed)

    write_csv(path, CHECK_COLUMNS, encode())
