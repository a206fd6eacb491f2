"""Aggregation of run outputs into plot-ready tables and rendered figures.

The ``report`` path scans an output directory for sweep, check, and
opportunity CSVs, flattens them into one long-format table, and renders
matplotlib figures next to the delimited output. Figures carry fixed
metadata so identical inputs produce identical files.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import ValidationError
from .tableio import write_csv

_PNG_METADATA = {"Software": "rralab"}
_DPI = 120

_SWEEP_ERROR_COLUMNS = ("err_kappa", "err_pi", "err_Lstar", "err_hedge")


def _read_csv(path: Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _maybe_float(raw: str) -> float:
    try:
        return float(raw)
    except (TypeError, ValueError):
        return float("nan")


def _save(fig, path: Path) -> None:
    fig.savefig(path, dpi=_DPI, metadata=_PNG_METADATA)
    plt.close(fig)


def _sweep_figure(path: Path, rows: list[dict[str, str]], out: Path) -> Path:
    kind = rows[0].get("limit_kind", "sweep")
    ps = np.array([_maybe_float(r["p"]) for r in rows])
    order = np.argsort(np.abs(ps))
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for col in _SWEEP_ERROR_COLUMNS:
        vals = np.array([_maybe_float(r.get(col, "nan")) for r in rows])[order]
        if np.all(~np.isfinite(vals)):
            continue
        ax.plot(np.abs(ps)[order], vals, marker="o", label=col)
    ax.set_xscale("log")
    if np.nanmin([_maybe_float(r.get(c, "nan")) for r in rows
                  for c in _SWEEP_ERROR_COLUMNS]) > 0:
        ax.set_yscale("log")
    ax.set_xlabel("|p|")
    ax.set_ylabel("error vs limit")
    ax.set_title(f"limit errors, {kind}")
    ax.legend(loc="best", fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    target = out / (path.stem + ".png")
    _save(fig, target)
    return target


def _checks_figure(rows: list[dict[str, str]], out: Path) -> Path:
    names: dict[str, list[int]] = {}
    for r in rows:
        ok = r.get("pass", "0") == "1"
        bucket = names.setdefault(r.get("check_name", "?"), [0, 0])
        bucket[0 if ok else 1] += 1
    labels = sorted(names)
    passed = [names[k][0] for k in labels]
    failed = [names[k][1] for k in labels]
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    x = np.arange(len(labels))
    ax.bar(x - 0.2, passed, width=0.4, label="pass", color="tab:green")
    ax.bar(x + 0.2, failed, width=0.4, label="fail", color="tab:red")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=7)
    ax.set_ylabel("grid points")
    ax.set_title("property checks")
    ax.legend()
    fig.tight_layout()
    target = out / "checks.png"
    _save(fig, target)
    return target


def _opportunity_figure(files: list[Path], out: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for path in files:
        rows = _read_csv(path)
        by_t: dict[float, list[float]] = {}
        for r in rows:
            by_t.setdefault(_maybe_float(r["t"]), []).append(_maybe_float(r["L"]))
        ts = sorted(by_t)
        means = [float(np.mean(by_t[t])) for t in ts]
        ax.plot(ts, means, label=path.stem.replace("opportunity_", ""))
    ax.set_xlabel("t")
    ax.set_ylabel("mean value process")
    ax.set_title("opportunity profiles")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    target = out / "opportunity_profiles.png"
    _save(fig, target)
    return target


def build_report(out_dir) -> list[Path]:
    """Aggregate CSVs under ``out_dir`` into report_long.csv plus figures.

    Returns the list of files written.
    """
    out = Path(out_dir)
    if not out.is_dir():
        raise ValidationError(f"output directory not found: {out}")

    sweep_files = sorted(out.glob("sweep_*.csv"))
    checks_file = out / "checks.csv"
    opp_files = sorted(out.glob("opportunity_p*.csv"))
    if not sweep_files and not checks_file.is_file() and not opp_files:
        raise ValidationError(f"no sweep/check/opportunity CSVs found under {out}")

    written: list[Path] = []
    long_rows: list[tuple] = []

    for path in sweep_files:
        rows = _read_csv(path)
        if not rows:
            continue
        for r in rows:
            for col in ("L0", "u_p", "err_kappa", "err_pi", "err_Lstar",
                        "err_wealth", "err_hedge"):
                val = _maybe_float(r.get(col, "nan"))
                if math.isfinite(val):
                    long_rows.append((path.name, r.get("limit_kind", ""),
                                      _maybe_float(r["p"]), col, val))
        written.append(_sweep_figure(path, rows, out))

    if checks_file.is_file():
        rows = _read_csv(checks_file)
        if rows:
            per_check: dict[str, list[int]] = {}
            for r in rows:
                ok = r.get("pass", "0") == "1"
                bucket = per_check.setdefault(r.get("check_name", "?"), [0, 0])
                bucket[0 if ok else 1] += 1
            for name in sorted(per_check):
                npass, nfail = per_check[name]
                long_rows.append(("checks.csv", name, float("nan"), "n_pass", float(npass)))
                long_rows.append(("checks.csv", name, float("nan"), "n_fail", float(nfail)))
            written.append(_checks_figure(rows, out))

    if opp_files:
        written.append(_opportunity_figure(opp_files, out))

    target = out / "report_long.csv"
    write_csv(target, ["source", "kind", "p", "metric", "value"], long_rows)
    written.insert(0, target)
    return written
