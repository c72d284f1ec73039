import numpy as np
import pytest

from feedbackflow.discretization import GridFunction
from feedbackflow.model import ConfigError, build_config
from feedbackflow.solver import (FixedPointError, SimulationError,
                                 TrajectoryRecord, simulate, step)


def config(**overrides):
    params = {
        "n_cells": 8, "obstacle.lower": 0.0,
        "theta0.value": -1.0, "rho": 2.0, "epsilon": 1e-3, "dt": 1e-4,
        "t_final": 0.01,
    }
    params.update(overrides)
    return build_config(params)


def test_step_constant_state_in_k_is_steady():
    cfg = config(**{"theta0.value": 0.5})
    theta, sigma, iters = step(cfg.theta0, cfg.dt, cfg)
    np.testing.assert_allclose(theta.values, 0.5, rtol=0, atol=1e-12)
    np.testing.assert_array_equal(sigma.values, 0.0)
    assert iters == 1


def test_step_pure_feedback_scalar_reduction():
    cfg = config(**{"n_cells": 16})
    theta, sigma, iters = step(cfg.theta0, cfg.dt, cfg)
    np.testing.assert_allclose(theta.values, -1 + 2e-4, rtol=0, atol=1e-12)
    np.testing.assert_allclose(sigma.values, -1.0)
    assert 1 <= iters <= cfg.fp_max_iter


def test_step_rejects_large_dt_at_construction():
    with pytest.raises(ConfigError, match="dt\\*rho/epsilon = 10 > 0.5"):
        config(dt=5e-3)


def test_step_fixed_point_exhaustion():
    cfg = config(fp_max_iter=1, fp_tol=1e-15)
    with pytest.raises(FixedPointError, match="did not converge"):
        step(cfg.theta0, cfg.dt, cfg)


def test_simulate_wraps_fixed_point_failure():
    with pytest.raises(SimulationError) as err:
        simulate(config(fp_max_iter=1, fp_tol=1e-15))
    assert err.value.step_index == 1
    assert isinstance(err.value.__cause__, FixedPointError)


def test_simulate_zero_horizon():
    traj = simulate(config(t_final=0.0))
    assert len(traj) == 1
    assert traj.times[0] == 0.0
    assert traj.d_k[0] == pytest.approx(1.0)
    assert traj.fp_iters[0] == 0


def test_simulate_pure_feedback_decays_linearly():
    traj = simulate(config())
    assert len(traj) == 101
    np.testing.assert_allclose(traj.times[-1], 0.01)
    np.testing.assert_allclose(traj.d_k, 1 - 2 * traj.times, atol=1e-9)
    np.testing.assert_allclose(traj.theta_mean, -1 + 2 * traj.times,
                               atol=1e-9)
    np.testing.assert_allclose(traj.sigma_norm, 1.0)
    assert traj.u_final is not None
    np.testing.assert_allclose(traj.u_final.values, traj.theta_final.values)


def test_simulate_large_state_with_degenerate_kappa():
    cfg = config(**{"theta0.value": 1e6, "kappa.kind": "saturating",
                    "alpha": 0.1, "t_final": 1e-4})
    traj = simulate(cfg)
    assert len(traj) == 2
    assert traj.d_k[-1] == 0.0
    assert traj.u_final.values[0] == \
        pytest.approx(1.1e6 - np.log(1e6 + 1), rel=1e-5)


def test_simulate_keeps_data_in_k():
    rng = np.random.default_rng(3)
    for _ in range(5):
        cfg = config(**{"theta0.kind": "cosine",
                        "theta0.amplitude": float(rng.uniform(0, 1)),
                        "obstacle.lower": -1.0, "obstacle.upper": 1.0,
                        "kappa.kind": "saturating", "alpha": 0.01})
        traj = simulate(cfg)
        assert traj.d_k.max() <= cfg.reg.epsilon + 10 * cfg.fp_tol


def test_simulate_snapshots():
    traj = simulate(config(snapshot_times=[0.0, 0.005, 5.0]))
    assert sorted(traj.snapshots) == [0.0, 0.005]
    np.testing.assert_allclose(traj.snapshots[0.005].values, -1 + 0.01,
                               atol=1e-9)


def test_trajectory_record_validation():
    ones = np.ones(3)
    with pytest.raises(ValueError, match="d_k"):
        TrajectoryRecord(np.arange(3.0), ones[:2], ones, ones, ones, ones)
    with pytest.raises(ValueError, match="evenly spaced"):
        TrajectoryRecord(np.array([0.0, 1.0, 3.0]), ones, ones, ones, ones,
                         ones)
    with pytest.raises(ValueError, match="non-finite"):
        TrajectoryRecord(np.arange(3.0), np.array([1.0, np.nan, 0.0]), ones,
                         ones, ones, ones)


def test_record_holds_final_fields_on_grid():
    cfg = config()
    traj = simulate(cfg)
    assert isinstance(traj.theta_final, GridFunction)
    assert traj.theta_final.grid == cfg.grid
    assert traj.dt == pytest.approx(cfg.dt)
