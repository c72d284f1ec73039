# Bundled scenarios, the checks they declare, and parameter sweeps.

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import gevent
import gevent.pool
import numpy as np

from .convex_set import distance, residual
from .model import ConfigError, SimulationConfig, build_config
from .solver import SimulationError, TrajectoryRecord, simulate
from .verify import (FP_SLACK, HittingReport, VerificationError,
                     detect_hitting, sufficient_gain,
                     verify_differential_inequality)

# Sweep rows run in a greenlet pool of this size.
CONCURRENCY = 4

SWEEP_AXES = ("rho", "epsilon", "alpha", "dt", "n_cells")

# Checks that only make sense when rho > rho*.
HITTING_CHECKS = ("hit-bound", "slope")


@dataclass(frozen=True)
class Expectation:
    check: str
    threshold: float
    target: Optional[float] = None


@dataclass(frozen=True)
class CheckResult:
    check: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        text = f"{status} {self.check}: value = {self.value:.6g}, " \
               f"threshold = {self.threshold:.6g}"
        return text + (f" ({self.detail})" if self.detail else "")


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    params: dict
    expectations: tuple
    # Analytic trace of the spatial mean, checked on trace_window.
    trace: Optional[Callable[[float], float]] = None
    trace_window: tuple = (0.0, math.inf)
    cfg: SimulationConfig = field(init=False)

    def __post_init__(self):
        for e in self.expectations:
            if e.check not in CHECKS:
                raise ValueError(f"scenario {self.name}: unknown check "
                                 f"'{e.check}'")
        cfg = build_config(self.params)
        object.__setattr__(self, "cfg", cfg)
        declared = {e.check for e in self.expectations}
        if declared & set(HITTING_CHECKS) and not cfg.rho > cfg.rho_star:
            raise ConfigError("rho", f"rho = {cfg.rho} must exceed rho* = "
                              f"{cfg.rho_star} for hitting expectations")
        if "hit-bound" in declared and not sufficient_gain(cfg):
            logging.warning("Scenario %s: rho = %g does not satisfy rho > "
                            "rho* + d_K(theta0)/T", self.name, cfg.rho)


# Context handed to every check.
@dataclass(frozen=True, eq=False)
class Outcome:
    scenario: Scenario
    cfg: SimulationConfig
    traj: TrajectoryRecord
    report: HittingReport


def _check_hit_bound(o, e):
    if o.report.bound is None:
        return True, math.nan, "rho <= rho*, bound vacuous"
    if not o.report.hit:
        return False, math.inf, "no hit"
    limit = o.report.bound + e.threshold * o.cfg.dt
    return o.report.t_star <= limit, o.report.t_star, f"bound {limit:.6g}"


def _check_hit_time(o, e):
    if not o.report.hit:
        return False, math.inf, "no hit"
    error = abs(o.report.t_star - e.target)
    return error <= e.threshold, error, f"t_star {o.report.t_star:.6g}"


def _check_slope(o, e):
    slope = o.report.slope_fit
    limit = -(o.cfg.rho - o.cfg.rho_star) + e.threshold * o.cfg.rho
    return slope <= limit, slope, f"limit {limit:.6g}"


def _check_slope_exact(o, e):
    error = abs(o.report.slope_fit + o.cfg.rho) / o.cfg.rho
    return error <= e.threshold, error, f"slope {o.report.slope_fit:.6g}"


def _check_invariance(o, e):
    worst = float(o.traj.d_k.max())
    return worst <= o.cfg.reg.epsilon + e.threshold, worst, ""


def _check_persistence(o, e):
    if not o.report.hit:
        return False, math.inf, "no hit"
    after = o.traj.times > o.report.t_star + o.cfg.dt
    worst = float(o.traj.d_k[after].max()) if after.any() else 0.0
    return worst <= o.cfg.reg.epsilon + e.threshold, worst, ""


def _check_layer_bound(o, e):
    after = o.traj.times >= e.target
    worst = float(o.traj.d_k[after].max()) if after.any() else 0.0
    return worst <= o.cfg.reg.epsilon + e.threshold, worst, \
        f"for t >= {e.target:g}"


def _check_inequality(o, e):
    try:
        worst = verify_differential_inequality(o.traj, o.cfg)
    except VerificationError as err:
        return False, math.inf, str(err)
    return worst <= e.threshold, worst, ""


def _check_analytic_trace(o, e):
    if o.scenario.trace is None or o.traj.theta_mean is None:
        return False, math.inf, "no trace available"
    lo, hi = o.scenario.trace_window
    window = (o.traj.times >= lo) & (o.traj.times <= hi)
    exact = np.array([o.scenario.trace(t) for t in o.traj.times[window]])
    error = float(np.abs(o.traj.theta_mean[window] - exact).max())
    return error <= e.threshold, error, ""


def _check_energy(o, e):
    ratio = o.report.worst_ratio
    return ratio <= 1 + e.threshold, ratio, ""


def _check_monotone(o, e):
    d = o.traj.d_k
    end = len(d) if not o.report.hit else int(np.argmax(d <= o.cfg.hit_tol))
    rise = float(np.diff(d[:end + 1]).max()) if end > 0 else 0.0
    return rise <= e.threshold, rise, "largest increase before hitting"


def _check_sign_structure(o, e):
    if o.traj.theta_final is None:
        return False, math.inf, "no final field"
    q = residual(o.traj.theta_final, o.cfg.K).values
    sigma = o.traj.sigma_final.values
    bad = np.count_nonzero((np.sign(sigma) != np.sign(q)))
    return bad <= e.threshold, float(bad), "cells with mismatched sign"


CHECKS = {
    "hit-bound": _check_hit_bound,
    "hit-time": _check_hit_time,
    "slope": _check_slope,
    "slope-exact": _check_slope_exact,
    "invariance": _check_invariance,
    "persistence": _check_persistence,
    "layer-bound": _check_layer_bound,
    "inequality-residual": _check_inequality,
    "analytic-trace": _check_analytic_trace,
    "energy": _check_energy,
    "monotone": _check_monotone,
    "sign-structure": _check_sign_structure,
}


def check_expectations(scenario, traj, report, cfg=None):
    outcome = Outcome(scenario, cfg or scenario.cfg, traj, report)
    results = []
    for e in scenario.expectations:
        passed, value, detail = CHECKS[e.check](outcome, e)
        results.append(CheckResult(e.check, bool(passed), float(value),
                                   e.threshold, detail))
    return results


def run_scenario(scenario):
    logging.info("Running scenario %s", scenario.name)
    traj = simulate(scenario.cfg)
    report = detect_hitting(traj, scenario.cfg)
    return traj, report, check_expectations(scenario, traj, report)


def _merge(defaults, overrides):
    return {**defaults, **(overrides or {})}


def _param(params, key):
    value = params[key]
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(key, f"expected a number, got {value!r}") from None


# Shared by the feedback scenarios driven towards [0, inf) from a constant
# theta0. With f = 0 the distance falls at exactly rate rho, so the hit time
# and slope have closed forms.
def _reaching_expectations(cfg, params, dt_slack=2.0):
    expectations = [
        Expectation("hit-bound", dt_slack),
        Expectation("slope", 0.05),
        Expectation("inequality-residual", 1e-3),
        Expectation("energy", 1e-9),
        Expectation("monotone", FP_SLACK * 1e-9),
        Expectation("persistence", FP_SLACK * 1e-9),
    ]
    if cfg.f.kind == "zero" and params["theta0.kind"] == "constant":
        target = distance(cfg.theta0, cfg.K) / cfg.rho
        expectations += [
            Expectation("hit-time", 0.02 * target, target=target),
            Expectation("slope-exact", 0.02),
        ]
    return tuple(expectations)


def _linear_trace(start, rate):
    return lambda t: start + rate * t


def scenario_intro_analytic(overrides=None):
    # Before the switch a constant theta0 < 0 rises at rate
    # f.before + rho/sqrt(|Omega|). The defaults give rate 1 and
    # theta(t) = t - 1.
    params = _merge({
        "n_cells": 64, "domain_length": 1.0,
        "obstacle.lower": 0.0, "obstacle.upper": None,
        "kappa.kind": "constant", "kappa.value": 1.0,
        "f.kind": "step", "f.after": 1.0, "f.switch_time": 1.0,
        "theta0.kind": "constant", "theta0.value": -1.0,
        "rho": 1.0, "epsilon": 1e-3, "t_final": 2.0, "dt": 1e-4,
    }, overrides)
    length = _param(params, "domain_length")
    if not length > 0:
        raise ConfigError("domain_length", f"domain_length = {length} must "
                          "be positive")
    params.setdefault("f.before", 1.0 - length ** -0.5)
    rho = _param(params, "rho")
    expectations = [Expectation("inequality-residual", 1e-2 * rho),
                    Expectation("energy", 1e-9)]
    trace, window = None, (0.0, math.inf)
    theta0 = _param(params, "theta0.value")
    rate = _param(params, "f.before") + rho / math.sqrt(length)
    if params["theta0.kind"] == "constant" and theta0 < 0 and rate > 0:
        t_hit = -theta0 / rate
        switch = _param(params, "f.switch_time")
        trace = _linear_trace(theta0, rate)
        window = (0.0, min(t_hit, switch))
        timing = []
        if t_hit <= switch:
            timing = [Expectation("hit-time", 0.01 * t_hit, target=t_hit),
                      Expectation("layer-bound", 1e-5, target=switch + 0.05)]
        expectations = [Expectation("analytic-trace", 0.02), *timing,
                        *expectations]
    return Scenario("intro_analytic", params, tuple(expectations),
                    trace=trace, trace_window=window)


def scenario_pure_feedback(rho=2.0, t_final=None, overrides=None):
    defaults = {
        "n_cells": 64, "domain_length": 1.0,
        "obstacle.lower": 0.0,
        "kappa.kind": "constant", "kappa.value": 1.0,
        "f.kind": "zero",
        "theta0.kind": "constant", "theta0.value": -1.0,
        "rho": rho, "epsilon": 1e-3,
    }
    if t_final is not None:
        defaults["t_final"] = t_final
    params = _merge(defaults, overrides)
    rho = _param(params, "rho")
    if not rho > 0:
        raise ConfigError("rho", f"rho = {rho} must be positive")
    params.setdefault("t_final", 2.0 / rho + 0.5)
    cfg = build_config(params)
    return Scenario("pure_feedback", params,
                    _reaching_expectations(cfg, params))


def scenario_double_obstacle(overrides=None):
    params = _merge({
        "n_cells": 64, "domain_length": 1.0,
        "obstacle.lower": -1.0, "obstacle.upper": 1.0,
        "kappa.kind": "constant", "kappa.value": 1.0,
        "f.kind": "zero",
        "theta0.kind": "cosine", "theta0.amplitude": 3.0,
        "theta0.wavenumber": 1.0,
        "rho": 3.0, "epsilon": 1e-3, "t_final": 1.0,
    }, overrides)
    return Scenario(
        "double_obstacle", params,
        (Expectation("hit-bound", 2.0),
         Expectation("slope", 0.05),
         Expectation("monotone", FP_SLACK * 1e-9),
         Expectation("persistence", FP_SLACK * 1e-9),
         Expectation("inequality-residual", 1e-2 * _param(params, "rho")),
         Expectation("energy", 1e-9),
         Expectation("sign-structure", 0)))


def scenario_degenerate_kappa(alpha=0.1, overrides=None):
    params = _merge({
        "n_cells": 64, "domain_length": 1.0,
        "obstacle.lower": 0.0,
        "kappa.kind": "saturating",
        "f.kind": "zero",
        "theta0.kind": "constant", "theta0.value": -1.0,
        "rho": 2.0, "epsilon": 1e-3, "alpha": alpha, "t_final": 1.5,
    }, overrides)
    cfg = build_config(params)
    return Scenario("degenerate_kappa", params,
                    _reaching_expectations(cfg, params))


def scenario_point_target(overrides=None):
    # K = {0}: the feedback drives theta to a single element and holds it.
    params = _merge({
        "n_cells": 64, "domain_length": 1.0,
        "obstacle.lower": 0.0, "obstacle.upper": 0.0,
        "kappa.kind": "constant", "kappa.value": 1.0,
        "f.kind": "zero",
        "theta0.kind": "cosine", "theta0.amplitude": 0.5,
        "theta0.wavenumber": 1.0,
        "rho": 2.0, "epsilon": 1e-3, "t_final": 1.0,
    }, overrides)
    return Scenario(
        "point_target", params,
        (Expectation("hit-bound", 2.0),
         Expectation("slope", 0.05),
         Expectation("monotone", FP_SLACK * 1e-9),
         Expectation("persistence", FP_SLACK * 1e-9),
         Expectation("inequality-residual", 1e-2 * _param(params, "rho")),
         Expectation("energy", 1e-9)))


def scenario_disturbed_feedback(overrides=None):
    # Piecewise-linear disturbance with rho* = 0.5 < rho.
    params = _merge({
        "n_cells": 32, "domain_length": 1.0,
        "obstacle.lower": 0.0,
        "kappa.kind": "constant", "kappa.value": 1.0,
        "f.kind": "table", "f.table": [[0.0, 0.5], [1.0, -0.5], [2.0, 0.5]],
        "theta0.kind": "constant", "theta0.value": -1.0,
        "rho": 2.0, "epsilon": 1e-3, "t_final": 1.5,
    }, overrides)
    return Scenario(
        "disturbed_feedback", params,
        (Expectation("hit-bound", 2.0),
         Expectation("slope", 0.05),
         Expectation("persistence", FP_SLACK * 1e-9),
         Expectation("inequality-residual", 1e-2 * _param(params, "rho")),
         Expectation("energy", 1e-9)))


SCENARIOS = {
    "intro_analytic": scenario_intro_analytic,
    "pure_feedback": scenario_pure_feedback,
    "double_obstacle": scenario_double_obstacle,
    "degenerate_kappa": scenario_degenerate_kappa,
    "point_target": scenario_point_target,
    "disturbed_feedback": scenario_disturbed_feedback,
}


def list_scenarios():
    return sorted(SCENARIOS)


def get_scenario(name, overrides=None):
    try:
        builder = SCENARIOS[name]
    except KeyError:
        raise KeyError(f"unknown scenario '{name}'") from None
    return builder(overrides=overrides)


@dataclass(frozen=True, eq=False)
class SweepRow:
    value: float
    status: str   # ok | rejected | failed
    report: Optional[HittingReport] = None
    max_violation: Optional[float] = None
    worst_ratio: Optional[float] = None
    traj: Optional[TrajectoryRecord] = None
    error: str = ""


@dataclass(frozen=True)
class SweepResult:
    axis: str
    rows: tuple


def _axis_value(axis, value):
    value = float(value)
    if axis == "n_cells":
        if not math.isfinite(value) or value != int(value):
            raise ConfigError("n_cells", f"expected an integer, got {value!r}")
        return int(value)
    return value


def _run_row(base, axis, value):
    # Scenarios that leave dt unset get it re-derived from (rho, epsilon).
    try:
        cfg = build_config({**base.params, axis: _axis_value(axis, value)})
    except ConfigError as e:
        logging.warning("Sweep %s = %g rejected: %s", axis, value, e)
        return SweepRow(value, "rejected", error=str(e))
    try:
        traj = simulate(cfg)
    except SimulationError as e:
        logging.warning("Sweep %s = %g failed: %s", axis, value, e)
        return SweepRow(value, "failed", error=str(e))
    report = detect_hitting(traj, cfg)
    logging.info("Sweep %s = %g: t_star = %s", axis, value, report.t_star)
    return SweepRow(value, "ok", report, report.max_violation,
                    report.worst_ratio, traj)


def run_sweep(base: Scenario, axis: str, values) -> SweepResult:
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis '{axis}' (expected one of "
                         f"{', '.join(SWEEP_AXES)})")
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one value")
    pool = gevent.pool.Pool(size=CONCURRENCY)
    greenlets = [pool.apply_async(_run_row, (base, axis, v)) for v in values]
    gevent.joinall(greenlets)
    rows = sorted((g.get() for g in greenlets), key=lambda r: r.value)
    return SweepResult(axis, tuple(rows))
