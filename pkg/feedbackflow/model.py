# Problem data: the diffusivity kappa, the source f, and the validated
# simulation config that ties them to a grid, an obstacle set and the
# regularization parameters.

import bisect
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .convex_set import ObstacleSet, RegularizationParams
from .discretization import GridFunction, SpatialGrid, build_grid

# Inner fixed-point loop contracts with factor dt*rho/epsilon; we require a
# comfortable margin below 1.
CONTRACTION_LIMIT = 0.5

# When dt is not given, it is picked as min(AUTO_DT_MAX, AUTO_DT_FRACTION *
# epsilon / rho).
AUTO_DT_MAX = 1e-4
AUTO_DT_FRACTION = 0.2

DEFAULT_FP_TOL = 1e-9
DEFAULT_FP_MAX_ITER = 100

# Points at which registry diffusivities are checked on construction.
KAPPA_SAMPLES = np.linspace(-50.0, 50.0, 20001)


class ConfigError(ValueError):
    def __init__(self, key, message):
        self.key = key
        self._message = message

    def __str__(self):
        return f"{self.key}: {self._message}"


def _saturating(r):
    a = np.abs(r)
    return a / (1.0 + a)


def _quadratic_saturating(r):
    r2 = np.square(r)
    return r2 / (1.0 + r2)


# name -> (function, kappa_star, kappa_sup). Only functions whose zero set has
# empty interior belong here, so that G is strictly increasing.
KAPPA_REGISTRY = {
    "saturating": (_saturating, 0.0, 1.0),
    "quadratic_saturating": (_quadratic_saturating, 0.0, 1.0),
}


@dataclass(frozen=True)
class Diffusivity:
    kind: str
    value: Optional[float] = None

    def __post_init__(self):
        if self.kind == "constant":
            if self.value is None or not self.value > 0 \
                    or not math.isfinite(self.value):
                raise ValueError(
                    f"constant kappa must be a positive finite number, got "
                    f"{self.value}")
            return
        if self.kind not in KAPPA_REGISTRY:
            raise ValueError(
                f"unknown kappa kind '{self.kind}' (expected 'constant' or one "
                f"of {', '.join(sorted(KAPPA_REGISTRY))})")
        samples = self(KAPPA_SAMPLES)
        if np.any(samples < 0) or np.any(samples > self.kappa_sup):
            raise ValueError(f"kappa '{self.kind}' leaves [0, kappa_sup]")
        zero = samples == 0
        if np.any(zero[:-1] & zero[1:]):
            raise ValueError(
                f"kappa '{self.kind}' vanishes on an interval; G would not "
                f"be strictly increasing")

    @classmethod
    def constant(cls, value):
        return cls("constant", float(value))

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    @property
    def kappa_star(self) -> float:
        if self.is_constant:
            return self.value
        return KAPPA_REGISTRY[self.kind][1]

    @property
    def kappa_sup(self) -> float:
        if self.is_constant:
            return self.value
        return KAPPA_REGISTRY[self.kind][2]

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.is_constant:
            return np.full(r.shape, self.value)
        return KAPPA_REGISTRY[self.kind][0](r)

    def lifted(self, r, alpha):
        # kappa_alpha = kappa + alpha only in the degenerate case.
        if self.kappa_star > 0:
            return self(r)
        return self(r) + alpha


@dataclass(frozen=True)
class SourceTerm:
    """Spatially constant source f(t); the time profile is one of the kinds
    below."""
    kind: str = "zero"
    value: float = 0.0
    table: tuple = ()
    before: float = 0.0
    after: float = 0.0
    switch_time: float = 0.0
    values: tuple = ()
    step_dt: float = 0.0

    KINDS = ("zero", "constant", "table", "step", "per_step")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown source kind '{self.kind}'")
        if self.kind == "table":
            if not self.table:
                raise ValueError("source table is empty")
            times = [t for t, _ in self.table]
            if any(b < a for a, b in zip(times, times[1:])):
                raise ValueError("source table times must be nondecreasing")
        if self.kind == "per_step":
            if not self.values:
                raise ValueError("per-step source has no values")
            if not self.step_dt > 0:
                raise ValueError("per-step source needs a positive step")
        numbers = [self.value, self.before, self.after, self.switch_time,
                   *self.values, *(x for pair in self.table for x in pair)]
        if not all(math.isfinite(x) for x in numbers):
            raise ValueError("source profile has non-finite entries")

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def constant(cls, value):
        return cls("constant", value=float(value))

    @classmethod
    def from_table(cls, pairs):
        return cls("table", table=tuple((float(t), float(v)) for t, v in pairs))

    @classmethod
    def step(cls, before, after, switch_time):
        return cls("step", before=float(before), after=float(after),
                   switch_time=float(switch_time))

    @classmethod
    def per_step(cls, values, dt):
        return cls("per_step", values=tuple(float(v) for v in values),
                   step_dt=float(dt))

    def value_at(self, t: float) -> float:
        if self.kind == "zero":
            return 0.0
        if self.kind == "constant":
            return self.value
        if self.kind == "step":
            # Right-continuous: the jump belongs to the later value.
            return self.after if t >= self.switch_time else self.before
        if self.kind == "per_step":
            n = min(int(round(t / self.step_dt)), len(self.values) - 1)
            return self.values[n]
        times = [p[0] for p in self.table]
        k = bisect.bisect_right(times, t)
        if k == 0:
            return self.table[0][1]
        if k == len(times):
            return self.table[-1][1]
        (t0, v0), (t1, v1) = self.table[k - 1], self.table[k]
        return v0 + (v1 - v0) * (t - t0) / (t1 - t0)

    def field(self, t: float, grid: SpatialGrid) -> GridFunction:
        return GridFunction.constant(self.value_at(t), grid)

    def norm_at(self, t: float, grid: SpatialGrid) -> float:
        return abs(self.value_at(t)) * math.sqrt(grid.domain_length)

    def rho_star_bound(self, times, grid: SpatialGrid) -> float:
        # Upper reading of the essential sup over the sampled times.
        if self.kind == "zero":
            return 0.0
        return max(self.norm_at(t, grid) for t in times)


@dataclass(frozen=True, eq=False)
class SimulationConfig:
    grid: SpatialGrid
    K: ObstacleSet
    kappa: Diffusivity
    f: SourceTerm
    theta0: GridFunction
    rho: float
    reg: RegularizationParams
    T_final: float
    dt: float
    fp_tol: float = DEFAULT_FP_TOL
    fp_max_iter: int = DEFAULT_FP_MAX_ITER
    hit_tol: Optional[float] = None
    snapshot_times: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.theta0.grid != self.grid:
            raise ConfigError("theta0", "initial datum lives on another grid")
        if not self.rho > 0:
            raise ConfigError("rho", f"rho = {self.rho} must be positive")
        if not self.T_final >= 0 or not math.isfinite(self.T_final):
            raise ConfigError("t_final",
                              f"t_final = {self.T_final} must be >= 0")
        if not self.dt > 0:
            raise ConfigError("dt", f"dt = {self.dt} must be positive")
        if not self.fp_tol > 0:
            raise ConfigError("fp_tol", f"fp_tol = {self.fp_tol} must be "
                              f"positive")
        if self.fp_max_iter < 1:
            raise ConfigError("fp_max_iter", f"fp_max_iter = "
                              f"{self.fp_max_iter} must be >= 1")
        if self.hit_tol is None:
            object.__setattr__(self, "hit_tol", self.reg.epsilon)
        elif not self.hit_tol > 0:
            raise ConfigError("hit_tol",
                              f"hit_tol = {self.hit_tol} must be positive")
        factor = self.contraction_factor
        if factor > CONTRACTION_LIMIT:
            raise ConfigError(
                "dt", f"dt*rho/epsilon = {factor:g} > {CONTRACTION_LIMIT:g}")
        if self.kappa.kappa_star == 0 and not self.reg.alpha > 0:
            raise ConfigError(
                "alpha", "alpha = 0 but kappa_star = 0; the degenerate case "
                "requires alpha > 0")

    @property
    def contraction_factor(self) -> float:
        return self.dt * self.rho / self.reg.epsilon

    @property
    def n_steps(self) -> int:
        return int(round(self.T_final / self.dt))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    @property
    def rho_star(self) -> float:
        return self.f.rho_star_bound(self.times, self.grid)


# Flat config schema. Values are the defaults; REQUIRED marks keys without
# one.
REQUIRED = object()
CONFIG_KEYS = {
    "n_cells": 64,
    "domain_length": 1.0,
    "obstacle.lower": None,
    "obstacle.upper": None,
    "kappa.kind": "constant",
    "kappa.value": 1.0,
    "f.kind": "zero",
    "f.value": 0.0,
    "f.table": None,
    "f.before": 0.0,
    "f.after": 0.0,
    "f.switch_time": 0.0,
    "f.values": None,
    "theta0.kind": "constant",
    "theta0.value": 0.0,
    "theta0.amplitude": 1.0,
    "theta0.wavenumber": 1.0,
    "rho": REQUIRED,
    "epsilon": REQUIRED,
    "alpha": 0.0,
    "t_final": REQUIRED,
    "dt": None,
    "fp_tol": DEFAULT_FP_TOL,
    "fp_max_iter": DEFAULT_FP_MAX_ITER,
    "hit_tol": None,
    "snapshot_times": None,
}


def auto_dt(rho, epsilon):
    return min(AUTO_DT_MAX, AUTO_DT_FRACTION * epsilon / rho)


def _number(params, key):
    value = params[key]
    if isinstance(value, bool):
        raise ConfigError(key, f"expected a number, got {value!r}")
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(key, f"expected a number, got {value!r}") from None


def _integer(params, key):
    value = _number(params, key)
    if value != int(value):
        raise ConfigError(key, f"expected an integer, got {params[key]!r}")
    return int(value)


def _optional_number(params, key):
    return None if params[key] is None else _number(params, key)


def build_config(overrides) -> SimulationConfig:
    """Turn a flat dotted-key mapping into a validated SimulationConfig."""
    for key in overrides:
        if key not in CONFIG_KEYS:
            raise ConfigError(key, "unknown config key")
    params = dict(CONFIG_KEYS)
    params.update(overrides)
    for key, value in params.items():
        if value is REQUIRED:
            raise ConfigError(key, "missing required key")

    try:
        grid = build_grid(_integer(params, "n_cells"),
                          _number(params, "domain_length"))
    except ConfigError:
        raise
    except ValueError as e:
        key = "n_cells" if "too small" in str(e) else "domain_length"
        raise ConfigError(key, str(e)) from None

    try:
        K = ObstacleSet.from_bounds(_optional_number(params, "obstacle.lower"),
                                    _optional_number(params, "obstacle.upper"))
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError("obstacle.lower", str(e)) from None

    kind = params["kappa.kind"]
    try:
        if kind == "constant":
            kappa = Diffusivity.constant(_number(params, "kappa.value"))
        else:
            kappa = Diffusivity(str(kind))
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError("kappa.kind", str(e)) from None

    rho = _number(params, "rho")
    epsilon = _number(params, "epsilon")
    alpha = _number(params, "alpha")
    try:
        RegularizationParams(epsilon)
    except ValueError as e:
        raise ConfigError("epsilon", str(e)) from None
    try:
        reg = RegularizationParams(epsilon, alpha)
    except ValueError as e:
        raise ConfigError("alpha", str(e)) from None

    dt = _optional_number(params, "dt")
    if dt is None and rho > 0:
        dt = auto_dt(rho, epsilon)

    f = _build_source(params, dt)
    theta0 = _build_theta0(params, grid)

    snapshots = params["snapshot_times"] or ()
    try:
        snapshots = tuple(float(t) for t in snapshots)
    except (TypeError, ValueError):
        raise ConfigError("snapshot_times",
                          "expected a list of times") from None

    return SimulationConfig(
        grid=grid, K=K, kappa=kappa, f=f, theta0=theta0, rho=rho, reg=reg,
        T_final=_number(params, "t_final"), dt=dt if dt is not None else 0.0,
        fp_tol=_number(params, "fp_tol"),
        fp_max_iter=_integer(params, "fp_max_iter"),
        hit_tol=_optional_number(params, "hit_tol"),
        snapshot_times=snapshots)


def _build_source(params, dt):
    kind = params["f.kind"]
    try:
        if kind == "zero":
            return SourceTerm.zero()
        if kind == "constant":
            return SourceTerm.constant(_number(params, "f.value"))
        if kind == "step":
            return SourceTerm.step(_number(params, "f.before"),
                                   _number(params, "f.after"),
                                   _number(params, "f.switch_time"))
        if kind == "table":
            table = params["f.table"]
            if not table:
                raise ConfigError("f.table", "table kind needs f.table")
            return SourceTerm.from_table(table)
        if kind == "per_step":
            if not params["f.values"]:
                raise ConfigError("f.values", "per_step kind needs f.values")
            return SourceTerm.per_step(params["f.values"], dt or 1.0)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError("f.kind", str(e)) from None
    raise ConfigError("f.kind", f"unknown source kind {kind!r}")


def _build_theta0(params, grid):
    kind = params["theta0.kind"]
    if kind == "constant":
        return GridFunction.constant(_number(params, "theta0.value"), grid)
    if kind == "cosine":
        amplitude = _number(params, "theta0.amplitude")
        k = _number(params, "theta0.wavenumber")
        x = grid.centers
        return GridFunction(
            amplitude * np.cos(2 * np.pi * k * x / grid.domain_length), grid)
    raise ConfigError("theta0.kind", f"unknown initial datum kind {kind!r}")
