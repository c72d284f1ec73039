import logging
import math

import numpy as np
import pytest

from feedbackflow import experiments
from feedbackflow.convex_set import distance
from feedbackflow.experiments import (Expectation, Scenario, get_scenario,
                                      list_scenarios, run_scenario, run_sweep)
from feedbackflow.model import ConfigError


def reduced(scenario, **params):
    """Same scenario and checks on a coarser or shorter run."""
    return Scenario(scenario.name, {**scenario.params, **params},
                    scenario.expectations, scenario.trace,
                    scenario.trace_window)


def assert_all_pass(results):
    failed = [r.line() for r in results if not r.passed]
    assert not failed, "\n".join(failed)


def assert_fp_iters_bounded(traj, cfg):
    d0 = distance(cfg.theta0, cfg.K)
    limit = math.ceil(math.log(cfg.fp_tol / d0)
                      / math.log(cfg.contraction_factor)) + 1
    assert traj.fp_iters.max() <= limit


def test_list_scenarios_matches_registry():
    assert list_scenarios() == sorted(experiments.SCENARIOS)
    assert {"intro_analytic", "pure_feedback", "double_obstacle",
            "degenerate_kappa"} <= set(list_scenarios())


@pytest.mark.parametrize("name", sorted(experiments.SCENARIOS))
def test_scenarios_build(name):
    scenario = get_scenario(name)
    assert scenario.cfg.contraction_factor <= 0.5
    assert scenario.expectations


def test_unknown_scenario():
    with pytest.raises(KeyError, match="unknown scenario"):
        get_scenario("nope")


def test_unknown_check_rejected():
    params = get_scenario("pure_feedback").params
    with pytest.raises(ValueError, match="unknown check"):
        Scenario("x", params, (Expectation("wobble", 1.0),))


def test_hitting_checks_need_rho_above_rho_star():
    params = {**get_scenario("pure_feedback").params,
              "f.kind": "constant", "f.value": 1.0, "rho": 0.5}
    with pytest.raises(ConfigError, match="rho\\*"):
        Scenario("weak", params, (Expectation("hit-bound", 2.0),))


def test_insufficient_gain_warns(caplog):
    with caplog.at_level(logging.WARNING):
        experiments.scenario_pure_feedback(rho=2.0, t_final=0.4)
    assert "does not satisfy" in caplog.text


def test_overrides_rebuild_expectations():
    scenario = get_scenario("pure_feedback", {"rho": 4})
    hit_time = next(e for e in scenario.expectations if e.check == "hit-time")
    assert hit_time.target == pytest.approx(0.25)
    assert scenario.params["t_final"] == pytest.approx(1.0)
    assert get_scenario("pure_feedback", {"rho": 4, "t_final": 0.3})\
        .params["t_final"] == 0.3
    degenerate = get_scenario("degenerate_kappa", {"alpha": 0.01})
    assert degenerate.cfg.reg.alpha == 0.01


def test_overridden_domain_length_recomputes_source():
    scenario = get_scenario("intro_analytic", {"domain_length": 4.0})
    assert scenario.params["f.before"] == 0.5
    assert scenario.trace(0.5) == pytest.approx(-0.5)
    kept = get_scenario("intro_analytic",
                        {"domain_length": 4.0, "f.before": 0.25})
    assert kept.params["f.before"] == 0.25
    assert kept.trace(1.0) == pytest.approx(-0.25)


def test_overridden_pure_feedback_passes():
    scenario = get_scenario("pure_feedback",
                            {"rho": 4, "n_cells": 4, "t_final": 0.3})
    _, report, results = run_scenario(scenario)
    assert_all_pass(results)
    assert report.t_star == pytest.approx(0.25, rel=0.02)


def test_intro_analytic_coarse():
    scenario = reduced(experiments.scenario_intro_analytic(), n_cells=4)
    traj, report, results = run_scenario(scenario)
    assert_all_pass(results)
    assert_fp_iters_bounded(traj, scenario.cfg)
    half = int(round(0.5 / scenario.cfg.dt))
    assert traj.theta_mean[half] == pytest.approx(-0.5, abs=0.02)
    assert report.bound is None


@pytest.mark.parametrize("rho", [2.0, 4.0])
def test_pure_feedback_reaches_at_one_over_rho(rho):
    scenario = reduced(experiments.scenario_pure_feedback(rho), n_cells=4,
                       t_final=1.2 / rho)
    traj, report, results = run_scenario(scenario)
    assert_all_pass(results)
    assert_fp_iters_bounded(traj, scenario.cfg)
    assert report.t_star == pytest.approx(1 / rho, rel=0.02)
    assert report.bound == pytest.approx(1 / rho)


def test_weak_gain_misses_short_horizon():
    scenario = reduced(experiments.scenario_pure_feedback(0.1, 0.5),
                       n_cells=4)
    _, report, results = run_scenario(scenario)
    assert not report.hit
    assert not all(r.passed for r in results)


def test_failed_expectation_is_reported():
    base = reduced(experiments.scenario_pure_feedback(2.0), n_cells=4,
                   t_final=0.6)
    scenario = Scenario(base.name, base.params,
                        (Expectation("hit-time", 0.01, target=0.1),))
    _, _, results = run_scenario(scenario)
    assert results[0].line().startswith("FAIL hit-time")


def test_double_obstacle_coarse():
    scenario = reduced(experiments.scenario_double_obstacle(), n_cells=16,
                       t_final=0.5)
    traj, report, results = run_scenario(scenario)
    assert_all_pass(results)
    assert_fp_iters_bounded(traj, scenario.cfg)
    assert report.t_star <= report.bound + 2 * scenario.cfg.dt


def test_point_target_coarse():
    scenario = reduced(experiments.scenario_point_target(), n_cells=16,
                       t_final=0.3)
    traj, report, results = run_scenario(scenario)
    assert_all_pass(results)
    assert_fp_iters_bounded(traj, scenario.cfg)
    assert report.hit


def test_disturbed_feedback_coarse():
    scenario = reduced(experiments.scenario_disturbed_feedback(), n_cells=4,
                       t_final=1.0)
    assert scenario.cfg.rho_star == pytest.approx(0.5)
    traj, report, results = run_scenario(scenario)
    assert_all_pass(results)
    assert_fp_iters_bounded(traj, scenario.cfg)
    assert report.bound == pytest.approx(1 / 1.5)


def test_degenerate_kappa_rejects_zero_alpha():
    with pytest.raises(ConfigError) as err:
        experiments.scenario_degenerate_kappa(alpha=0.0)
    assert err.value.key == "alpha"


def test_degenerate_kappa_alpha_independence():
    t_stars = []
    for alpha in (0.1, 0.01, 0.001):
        scenario = reduced(experiments.scenario_degenerate_kappa(alpha),
                           n_cells=4, t_final=0.6)
        traj, report, results = run_scenario(scenario)
        assert_all_pass(results)
        assert_fp_iters_bounded(traj, scenario.cfg)
        t_stars.append(report.t_star)
    dt = scenario.cfg.dt
    assert max(t_stars) - min(t_stars) <= 2 * dt
    assert t_stars[0] == pytest.approx((1 - 1e-3) / 2, abs=2 * dt)


def test_invariance_from_random_data_in_k():
    rng = np.random.default_rng(11)
    base = experiments.scenario_double_obstacle()
    for _ in range(20):
        params = {**base.params, "n_cells": 8, "t_final": 0.01,
                  "theta0.amplitude": float(rng.uniform(0, 1)),
                  "theta0.wavenumber": float(rng.integers(1, 4))}
        scenario = Scenario("in_k", params,
                            (Expectation("invariance", 1e-8),
                             Expectation("energy", 1e-9)))
        _, _, results = run_scenario(scenario)
        assert_all_pass(results)


def test_sweep_rows_and_rejection():
    base = reduced(experiments.scenario_pure_feedback(2.0), n_cells=4,
                   t_final=0.6)
    result = run_sweep(base, "dt", [1e-3, 1e-4])
    assert [row.value for row in result.rows] == [1e-4, 1e-3]
    ok, rejected = result.rows
    assert ok.status == "ok"
    assert ok.report.t_star == pytest.approx(0.5, abs=0.01)
    assert rejected.status == "rejected"
    assert "dt*rho/epsilon" in rejected.error


def test_sweep_rejects_bad_cell_counts():
    base = reduced(experiments.scenario_pure_feedback(2.0), n_cells=4,
                   t_final=0.05)
    result = run_sweep(base, "n_cells", [4, 4.7, math.nan])
    rows = {row.status: [] for row in result.rows}
    for row in result.rows:
        rows[row.status].append(row)
    assert [row.value for row in rows["ok"]] == [4]
    assert len(rows["rejected"]) == 2
    assert all(row.error.startswith("n_cells:") for row in rows["rejected"])
    assert any(row.value == 4.7 for row in rows["rejected"])


def test_sweep_unknown_axis():
    with pytest.raises(ValueError, match="unknown sweep axis"):
        run_sweep(get_scenario("pure_feedback"), "kappa", [1.0])


@pytest.mark.slow
def test_intro_analytic_full():
    _, _, results = run_scenario(experiments.scenario_intro_analytic())
    assert_all_pass(results)


@pytest.mark.slow
@pytest.mark.parametrize("name", sorted(experiments.SCENARIOS))
def test_bundled_scenarios_pass(name):
    _, _, results = run_scenario(get_scenario(name))
    assert_all_pass(results)


@pytest.mark.slow
def test_rho_sweep_one_over_rho_law():
    base = reduced(experiments.scenario_pure_feedback(2.0), n_cells=4,
                   t_final=1.2)
    result = run_sweep(base, "rho", [1, 2, 4, 8])
    for row in result.rows:
        assert row.status == "ok"
        assert row.report.t_star == pytest.approx(1 / row.value, rel=0.02)
        assert row.report.t_star <= row.report.bound + 2 * 1e-4
        assert row.max_violation <= 1e-2 * row.value


@pytest.mark.slow
def test_epsilon_refinement():
    base = reduced(experiments.scenario_pure_feedback(2.0), n_cells=4,
                   t_final=0.6)
    t_stars = []
    for eps in (1e-3, 5e-4, 2.5e-4):
        scenario = Scenario(base.name, {**base.params, "epsilon": eps,
                                        "alpha": eps}, ())
        _, report, _ = run_scenario(scenario)
        t_stars.append(report.t_star)
    assert abs(t_stars[1] - t_stars[0]) <= 4 * 1e-3 / 2
    assert abs(t_stars[2] - t_stars[1]) <= 4 * 5e-4 / 2
