"""Line-oriented run configuration: ``section.key = value`` text files.

Sections: ``model`` (family and parameters, validated by the market
builder), ``sim`` (n_paths, n_steps, seed), ``solver`` (basis_degree,
picard_iters, floor_eps, and an optional default p for ``solve``), ``sweep``
(limit_kind, p_grid). Unknown sections or keys are rejected so typos never
pass silently. ``#`` starts a comment; blank lines are ignored.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import ValidationError

SECTIONS = ("model", "sim", "solver", "sweep")

_SIM_KEYS = {"n_paths", "n_steps", "seed"}
_SOLVER_KEYS = {"basis_degree", "picard_iters", "floor_eps", "p"}
_SWEEP_KEYS = {"limit_kind", "p_grid"}


@dataclass
class SimConfig:
    n_paths: int
    n_steps: int
    seed: int | None = None


@dataclass
class SolverConfig:
    basis_degree: int = 3
    picard_iters: int = 8
    floor_eps: float = 1e-6
    p: float | None = None


@dataclass
class SweepConfig:
    limit_kind: str
    p_grid: list[float] = field(default_factory=list)


@dataclass
class RunConfig:
    model: dict[str, str]
    sim: SimConfig | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    sweep: SweepConfig | None = None


def parse_config_text(text: str, origin: str = "<config>") -> dict[str, dict[str, str]]:
    out: dict[str, dict[str, str]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{origin}:{lineno}: expected 'section.key = value'")
        lhs, value = line.split("=", 1)
        lhs = lhs.strip()
        value = value.strip()
        if "." not in lhs:
            raise ValidationError(
                f"{origin}:{lineno}: key '{lhs}' must be qualified as section.key"
            )
        section, key = lhs.split(".", 1)
        if section not in SECTIONS:
            raise ValidationError(
                f"{origin}:{lineno}: unknown section '{section}' (known: {', '.join(SECTIONS)})"
            )
        if not key:
            raise ValidationError(f"{origin}:{lineno}: empty key in '{lhs}'")
        bucket = out.setdefault(section, {})
        if key in bucket:
            raise ValidationError(f"{origin}:{lineno}: duplicate key '{lhs}'")
        bucket[key] = value
    return out


def _int_of(section: str, key: str, raw: dict, default=None):
    if key not in raw:
        if default is ...:
            raise ValidationError(f"config is missing required key '{section}.{key}'")
        return default
    try:
        return int(raw[key])
    except ValueError:
        raise ValidationError(
            f"config key '{section}.{key}' must be an integer, got {raw[key]!r}"
        ) from None


def _float_of(section: str, key: str, raw: dict, default=None):
    if key not in raw:
        if default is ...:
            raise ValidationError(f"config is missing required key '{section}.{key}'")
        return default
    try:
        return float(raw[key])
    except ValueError:
        raise ValidationError(
            f"config key '{section}.{key}' must be a number, got {raw[key]!r}"
        ) from None


def _reject_unknown(section: str, raw: dict, allowed: set[str]) -> None:
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ValidationError(
            f"unknown key(s) in section '{section}': "
            + ", ".join(f"{section}.{k}" for k in unknown)
        )


def load_run_config(path, require: tuple[str, ...] = ("model",)) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"config file not found: {path}")
    sections = parse_config_text(path.read_text(), origin=str(path))
    for name in require:
        if name not in sections:
            raise ValidationError(f"config is missing required section '{name}'")
    if "model" not in sections:
        raise ValidationError("config is missing required section 'model'")

    cfg = RunConfig(model=sections["model"])

    if "sim" in sections:
        raw = sections["sim"]
        _reject_unknown("sim", raw, _SIM_KEYS)
        cfg.sim = SimConfig(
            n_paths=_int_of("sim", "n_paths", raw, ...),
            n_steps=_int_of("sim", "n_steps", raw, ...),
            seed=_int_of("sim", "seed", raw, None),
        )

    if "solver" in sections:
        raw = sections["solver"]
        _reject_unknown("solver", raw, _SOLVER_KEYS)
        cfg.solver = SolverConfig(
            basis_degree=_int_of("solver", "basis_degree", raw, 3),
            picard_iters=_int_of("solver", "picard_iters", raw, 8),
            floor_eps=_float_of("solver", "floor_eps", raw, 1e-6),
            p=_float_of("solver", "p", raw, None),
        )

    if "sweep" in sections:
        raw = sections["sweep"]
        _reject_unknown("sweep", raw, _SWEEP_KEYS)
        if "limit_kind" not in raw:
            raise ValidationError("config is missing required key 'sweep.limit_kind'")
        if "p_grid" not in raw:
            raise ValidationError("config is missing required key 'sweep.p_grid'")
        try:
            p_grid = [float(tok) for tok in raw["p_grid"].split(",") if tok.strip()]
        except ValueError:
            raise ValidationError(
                f"config key 'sweep.p_grid' must be a comma-separated list of numbers, "
                f"got {raw['p_grid']!r}"
            ) from None
        cfg.sweep = SweepConfig(limit_kind=raw["limit_kind"].strip(), p_grid=p_grid)

    return cfg
