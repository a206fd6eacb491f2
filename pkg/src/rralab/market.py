"""Continuous market models and Monte Carlo path generation.

A market is described by its market price of risk ``lambda_fn``, volatility
``sigma_fn`` (so the return increments are ``dR = Sigma lambda dt + sigma dW``
with ``Sigma = sigma sigma^T``), a bounded utility weight ``d_fn`` clamped to
``[k1, k2]``, and an optional mean-reverting one-factor state driving the
coefficients.

Three families are registered:

* ``no_trade``   -- no risky assets at all (``d = 0``), constant utility weight;
* ``merton``     -- one asset with constant drift/volatility;
* ``one_factor`` -- one asset whose market price of risk is affine in an
  Ornstein-Uhlenbeck factor, optionally driving the utility weight.

Simulation uses Euler stepping on a uniform grid with counter-based per-path
random substreams, so path ``i`` is a pure function of ``(seed, i)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from numpy.typing import NDArray

from .errors import ResourceError, ValidationError

Array = NDArray[np.float64]

CONSUMPTION_MODES = ("terminal_only", "intermediate")
FAMILIES = ("no_trade", "merton", "one_factor")


@dataclass(frozen=True)
class RiskAversionParams:
    """Utility exponent ``p`` with its derived conjugate quantities.

    ``q`` and ``beta`` are always computed from ``p`` at construction:
    ``q = p/(p-1)`` and ``beta = 1/(1-p)``.
    """

    p: float
    q: float = field(init=False)
    beta: float = field(init=False)

    def __post_init__(self) -> None:
        p = float(self.p)
        if not math.isfinite(p) or p == 0.0 or p >= 1.0:
            raise ValidationError(
                f"risk aversion exponent must lie in (-inf,0) or (0,1), got {self.p!r}"
            )
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", p / (p - 1.0))
        object.__setattr__(self, "beta", 1.0 / (1.0 - p))


@dataclass(frozen=True)
class FactorSpec:
    """Mean-reverting one-factor diffusion dY = speed*(mean - Y) dt + vol dB."""

    mean: float
    speed: float
    vol: float
    rho: float  # correlation between factor noise and (first) asset noise
    init: float
    exact: bool = False  # use the exact OU transition instead of Euler


@dataclass(frozen=True)
class MarketModel:
    """Coefficient functions of a continuous market.

    ``lambda_fn(t, y)`` returns the market price of risk, shape ``(d,)`` or
    ``(n, d)`` for a state array ``y`` of shape ``(n,)``; ``sigma_fn(t, y)``
    returns the volatility matrix, shape ``(d, d)`` or ``(n, d, d)``;
    ``d_fn(t, y)`` returns the utility weight, scalar or shape ``(n,)``
    (clamped to ``[k1, k2]`` during simulation).
    """

    T: float
    d: int
    lambda_fn: Callable[[float, Array], Array]
    sigma_fn: Callable[[float, Array], Array]
    d_fn: Callable[[float, Array], Array]
    k1: float
    k2: float
    consumption_mode: str
    x0: float
    factor: FactorSpec | None = None
    deterministic: bool = True  # coefficient functions ignore the factor state
    family: str = "custom"
    fingerprint: tuple = ()

    @property
    def intermediate(self) -> bool:
        return self.consumption_mode == "intermediate"

    def remaining_mass(self, t: Array | float) -> Array:
        """Mass that the consumption clock puts on [t, T] (incl. the bulk at T)."""
        t = np.asarray(t, dtype=float)
        if self.intermediate:
            return 1.0 + self.T - t
        return np.ones_like(t)

    def lambda_at(self, t: float, y: Array, n: int) -> Array:
        out = np.asarray(self.lambda_fn(t, y), dtype=float)
        return np.broadcast_to(out, (n, self.d))

    def sigma_at(self, t: float, y: Array, n: int) -> Array:
        out = np.asarray(self.sigma_fn(t, y), dtype=float)
        return np.broadcast_to(out, (n, self.d, self.d))

    def d_at(self, t: float, y: Array, n: int) -> Array:
        out = np.asarray(self.d_fn(t, y), dtype=float)
        return np.clip(np.broadcast_to(out, (n,)), self.k1, self.k2)


@dataclass(frozen=True)
class PathBundle:
    """One Monte Carlo ensemble on a uniform time grid.

    Shapes (``n`` paths, ``N`` steps, ``d`` assets): ``time_grid (N+1,)``,
    ``dW (n, N, d)``, ``dW_factor (n, N)``, ``factor_states (n, N+1)``,
    ``dR (n, N, d)``, ``D_vals (n, N+1)``. Arrays are immutable.
    """

    market: MarketModel
    time_grid: Array
    n_paths: int
    dW: Array
    dW_factor: Array
    factor_states: Array
    dR: Array
    D_vals: Array
    seed: int

    @property
    def n_steps(self) -> int:
        return len(self.time_grid) - 1

    @property
    def dt(self) -> float:
        return float(self.time_grid[1] - self.time_grid[0])


def uniform_grid(T: float, n_steps: int) -> Array:
    return np.linspace(0.0, float(T), int(n_steps) + 1)


# --------------------------------------------------------------------------
# model construction
# --------------------------------------------------------------------------

_COMMON_KEYS = {"family", "T", "x0", "consumption"}
_FAMILY_KEYS = {
    "no_trade": {"D"},
    "merton": {"mu_drift", "sigma", "D"},
    "one_factor": {
        "sigma",
        "lambda_bar",
        "lambda_gamma",
        "factor_mean",
        "factor_speed",
        "factor_vol",
        "factor_init",
        "factor_exact",
        "rho",
        "d_delta",
        "k1",
        "k2",
    },
}


def _as_float(cfg: Mapping[str, object], key: str, default: float | None = None) -> float:
    if key not in cfg:
        if default is None:
            raise ValidationError(f"model config is missing required key '{key}'")
        return default
    try:
        return float(cfg[key])  # type: ignore[arg-type]
    except (TypeError, ValueError):
        raise ValidationError(f"model key '{key}' must be a number, got {cfg[key]!r}") from None


def _as_bool(cfg: Mapping[str, object], key: str, default: bool) -> bool:
    if key not in cfg:
        return default
    raw = str(cfg[key]).strip().lower()
    if raw in ("true", "1", "yes"):
        return True
    if raw in ("false", "0", "no"):
        return False
    raise ValidationError(f"model key '{key}' must be a boolean, got {cfg[key]!r}")


def build_market(config: Mapping[str, object]) -> MarketModel:
    """Build a validated MarketModel from a parsed model description."""
    if "family" not in config:
        raise ValidationError("model config is missing required key 'family'")
    family = str(config["family"]).strip()
    if family not in FAMILIES:
        raise ValidationError(f"unknown model family '{family}'; known: {', '.join(FAMILIES)}")

    allowed = _COMMON_KEYS | _FAMILY_KEYS[family]
    unknown = sorted(set(config) - allowed)
    if unknown:
        raise ValidationError(f"unknown model key(s) for family '{family}': {', '.join(unknown)}")

    T = _as_float(config, "T", 1.0)
    x0 = _as_float(config, "x0", 1.0)
    mode = str(config.get("consumption", "terminal_only")).strip()
    if mode not in CONSUMPTION_MODES:
        raise ValidationError(
            f"consumption mode must be one of {CONSUMPTION_MODES}, got '{mode}'"
        )
    if T <= 0.0:
        raise ValidationError(f"horizon T must be positive, got {T}")
    if x0 <= 0.0:
        raise ValidationError(f"initial capital x0 must be positive, got {x0}")

    if family == "no_trade":
        level = _as_float(config, "D", 1.0)
        if level <= 0.0:
            raise ValidationError(f"utility weight D must be positive, got {level}")
        empty = np.zeros(0)
        return MarketModel(
            T=T,
            d=0,
            lambda_fn=lambda t, y: empty,
            sigma_fn=lambda t, y: np.zeros((0, 0)),
            d_fn=lambda t, y: level,
            k1=level,
            k2=level,
            consumption_mode=mode,
            x0=x0,
            factor=None,
            deterministic=True,
            family=family,
            fingerprint=("no_trade", T, x0, mode, level),
        )

    if family == "merton":
        drift = _as_float(config, "mu_drift")
        sigma = _as_float(config, "sigma")
        level = _as_float(config, "D", 1.0)
        if sigma <= 0.0:
            raise ValidationError(f"singular volatility: sigma must be positive, got {sigma}")
        if level <= 0.0:
            raise ValidationError(f"utility weight D must be positive, got {level}")
        lam = np.array([drift / (sigma * sigma)])
        vol = np.array([[sigma]])
        return MarketModel(
            T=T,
            d=1,
            lambda_fn=lambda t, y: lam,
            sigma_fn=lambda t, y: vol,
            d_fn=lambda t, y: level,
            k1=level,
            k2=level,
            consumption_mode=mode,
            x0=x0,
            factor=None,
            deterministic=True,
            family=family,
            fingerprint=("merton", T, x0, mode, drift, sigma, level),
        )

    # one_factor
    sigma = _as_float(config, "sigma")
    if sigma <= 0.0:
        raise ValidationError(f"singular volatility: sigma must be positive, got {sigma}")
    lambda_bar = _as_float(config, "lambda_bar")
    lambda_gamma = _as_float(config, "lambda_gamma", 0.0)
    f_mean = _as_float(config, "factor_mean", 0.0)
    f_speed = _as_float(config, "factor_speed")
    f_vol = _as_float(config, "factor_vol")
    f_init = _as_float(config, "factor_init", f_mean)
    rho = _as_float(config, "rho", 0.0)
    exact = _as_bool(config, "factor_exact", False)
    d_delta = _as_float(config, "d_delta", 0.0)
    if f_speed <= 0.0:
        raise ValidationError(f"factor_speed must be positive, got {f_speed}")
    if f_vol <= 0.0:
        raise ValidationError(f"factor_vol must be positive, got {f_vol}")
    if not abs(rho) < 1.0:
        raise ValidationError(f"factor correlation must satisfy |rho| < 1, got {rho}")
    if d_delta != 0.0:
        k1 = _as_float(config, "k1")
        k2 = _as_float(config, "k2")
    else:
        k1 = _as_float(config, "k1", 1.0)
        k2 = _as_float(config, "k2", 1.0)
    if k1 <= 0.0 or k2 <= 0.0 or k1 > k2:
        raise ValidationError(f"weight bounds must satisfy 0 < k1 <= k2, got k1={k1}, k2={k2}")

    vol = np.array([[sigma]])

    def lambda_fn(t: float, y: Array) -> Array:
        return np.atleast_1d(lambda_bar + lambda_gamma * np.asarray(y))[..., None]

    if d_delta != 0.0:
        def d_fn(t: float, y: Array) -> Array:
            return np.exp(d_delta * np.asarray(y, dtype=float))
    else:
        def d_fn(t: float, y: Array) -> Array:
            return 1.0

    factor = FactorSpec(mean=f_mean, speed=f_speed, vol=f_vol, rho=rho, init=f_init, exact=exact)
    return MarketModel(
        T=T,
        d=1,
        lambda_fn=lambda_fn,
        sigma_fn=lambda t, y: vol,
        d_fn=d_fn,
        k1=k1,
        k2=k2,
        consumption_mode=mode,
        x0=x0,
        factor=factor,
        deterministic=(lambda_gamma == 0.0 and d_delta == 0.0),
        family="one_factor",
        fingerprint=(
            "one_factor", T, x0, mode, sigma, lambda_bar, lambda_gamma,
            f_mean, f_speed, f_vol, f_init, rho, exact, d_delta, k1, k2,
        ),
    )


def constant_weight_twin(market: MarketModel) -> MarketModel:
    """Same market with the utility weight replaced by D = 1 (k1 = k2 = 1)."""
    from dataclasses import replace

    return replace(
        market,
        d_fn=lambda t, y: 1.0,
        k1=1.0,
        k2=1.0,
        fingerprint=market.fingerprint + ("D1",),
    )


# --------------------------------------------------------------------------
# simulation
# --------------------------------------------------------------------------

def _path_normals(seed: int, path_index: int, n_steps: int, width: int) -> Array:
    """Standard normals for one path; pure function of (seed, path_index)."""
    key = np.array([seed, path_index], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key))
    return gen.standard_normal((n_steps, width))


def simulate(market: MarketModel, n_paths: int, n_steps: int, seed: int) -> PathBundle:
    """Simulate a PathBundle on the uniform grid with step T/n_steps.

    Output is bitwise-identical for identical arguments regardless of the
    evaluation environment's thread count.
    """
    n_paths = int(n_paths)
    n_steps = int(n_steps)
    seed = int(seed)
    if n_paths < 2:
        raise ValidationError(f"n_paths must be at least 2, got {n_paths}")
    if n_steps < 1:
        raise ValidationError(f"n_steps must be at least 1, got {n_steps}")
    if not 0 <= seed < 2**64:
        raise ValidationError(f"seed must fit in 64 bits, got {seed}")

    d = market.d
    grid = uniform_grid(market.T, n_steps)
    dt = market.T / n_steps
    sqrt_dt = math.sqrt(dt)

    try:
        normals = np.empty((n_paths, n_steps, d + 1))
        for i in range(n_paths):
            normals[i] = _path_normals(seed, i, n_steps, d + 1)

        dW = normals[:, :, :d] * sqrt_dt
        factor_states = np.zeros((n_paths, len(grid)))
        dW_factor = np.zeros((n_paths, n_steps))
        if market.factor is not None:
            spec = market.factor
            # factor noise correlated with the first asset component
            if d > 0:
                mix = spec.rho * normals[:, :, 0] + math.sqrt(1.0 - spec.rho**2) * normals[:, :, d]
            else:
                mix = normals[:, :, d]
            dW_factor = mix * sqrt_dt
            factor_states[:, 0] = spec.init
            if spec.exact:
                decay = math.exp(-spec.speed * dt)
                stdev = spec.vol * math.sqrt((1.0 - decay**2) / (2.0 * spec.speed))
                for k in range(n_steps):
                    factor_states[:, k + 1] = (
                        spec.mean
                        + (factor_states[:, k] - spec.mean) * decay
                        + stdev * mix[:, k]
                    )
            else:
                for k in range(n_steps):
                    y = factor_states[:, k]
                    factor_states[:, k + 1] = (
                        y + spec.speed * (spec.mean - y) * dt + spec.vol * dW_factor[:, k]
                    )

        dR = np.zeros((n_paths, n_steps, d))
        for k in range(n_steps):
            y = factor_states[:, k]
            lam = market.lambda_at(grid[k], y, n_paths)
            sig = market.sigma_at(grid[k], y, n_paths)
            cov = np.einsum("nij,nkj->nik", sig, sig, optimize=False)
            drift = np.einsum("nij,nj->ni", cov, lam, optimize=False)
            diff = np.einsum("nij,nj->ni", sig, dW[:, k, :], optimize=False)
            dR[:, k, :] = drift * dt + diff

        D_vals = np.empty((n_paths, len(grid)))
        for k in range(len(grid)):
            D_vals[:, k] = market.d_at(grid[k], factor_states[:, k], n_paths)
    except MemoryError as exc:  # pragma: no cover - depends on host memory
        raise ResourceError(
            f"out of memory simulating {n_paths} paths x {n_steps} steps"
        ) from exc

    for arr in (grid, dW, dW_factor, factor_states, dR, D_vals):
        arr.flags.writeable = False

    return PathBundle(
        market=market,
        time_grid=grid,
        n_paths=n_paths,
        dW=dW,
        dW_factor=dW_factor,
        factor_states=factor_states,
        dR=dR,
        D_vals=D_vals,
        seed=seed,
    )
