# Semi-implicit time stepping for the regularized feedback problem:
#
#   (theta' - theta)/dt + A(kappa_alpha(theta)) theta' + rho Dd_eps(theta') = f
#
# with the diffusion coefficient lagged to the old state and the Yosida term
# resolved by fixed-point iteration.

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .convex_set import distance, envelope_of_distance, yosida_gradient
from .discretization import (GridFunction, assemble_diffusion,
                             face_conductivity, g_alpha_field, norm,
                             solve_shifted_system)
from .model import SimulationConfig

# Emit a progress line at most this many times per run.
PROGRESS_LINES = 10


class FixedPointError(RuntimeError):
    def __init__(self, iterations, residual):
        self.iterations = iterations
        self.residual = residual

    def __str__(self):
        return (f"fixed-point loop did not converge in {self.iterations} "
                f"iterations (last residual {self.residual:.3e}); dt is too "
                f"large relative to epsilon/rho")


class SimulationError(RuntimeError):
    def __init__(self, step_index, cause):
        self.step_index = step_index
        self._cause = cause

    def __str__(self):
        return f"step {self.step_index} failed: {self._cause}"


def step(theta_n: GridFunction, t_next: float, cfg: SimulationConfig):
    """Advance one step; returns (theta_next, sigma_next, iterations)."""
    grid = theta_n.grid
    eps = cfg.reg.epsilon
    A = assemble_diffusion(
        face_conductivity(theta_n, cfg.kappa, cfg.reg.alpha), grid)
    shift = 1.0 / cfg.dt
    base = theta_n.values * shift + cfg.f.value_at(t_next)

    current = theta_n
    res = math.inf
    for k in range(1, cfg.fp_max_iter + 1):
        sigma = yosida_gradient(current, cfg.K, eps)
        rhs = GridFunction(base - cfg.rho * sigma.values, grid)
        candidate = solve_shifted_system(A, shift, rhs)
        res = norm(GridFunction(candidate.values - current.values, grid))
        current = candidate
        if res <= cfg.fp_tol:
            return current, yosida_gradient(current, cfg.K, eps), k
    raise FixedPointError(cfg.fp_max_iter, res)


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    times: np.ndarray
    d_k: np.ndarray
    d_eps_k: np.ndarray
    sigma_norm: np.ndarray
    theta_norm: np.ndarray
    fp_iters: np.ndarray
    # The fields below are absent when the record was read back from CSV.
    theta_mean: Optional[np.ndarray] = None
    theta_final: Optional[GridFunction] = None
    sigma_final: Optional[GridFunction] = None
    u_final: Optional[GridFunction] = None
    snapshots: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.times)
        if n == 0:
            raise ValueError("empty trajectory")
        for name in ("d_k", "d_eps_k", "sigma_norm", "theta_norm",
                     "fp_iters"):
            column = getattr(self, name)
            if len(column) != n:
                raise ValueError(f"column {name} has {len(column)} samples, "
                                 f"expected {n}")
            if not np.all(np.isfinite(column)):
                raise ValueError(f"column {name} has non-finite samples")
        if n > 1:
            spacing = np.diff(self.times)
            if np.any(spacing <= 0):
                raise ValueError("trajectory times are not increasing")
            if not np.allclose(spacing, spacing[0], rtol=1e-6, atol=0):
                raise ValueError("trajectory times are not evenly spaced")

    def __len__(self):
        return len(self.times)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self) > 1 else 0.0


def simulate(cfg: SimulationConfig) -> TrajectoryRecord:
    n_steps = cfg.n_steps
    eps = cfg.reg.epsilon
    logging.info("Simulating %d steps: rho = %g, epsilon = %g, alpha = %g, "
                 "dt = %g, K = %s", n_steps, cfg.rho, eps, cfg.reg.alpha,
                 cfg.dt, cfg.K.describe())

    times = np.arange(n_steps + 1) * cfg.dt
    d_k = np.empty(n_steps + 1)
    d_eps_k = np.empty(n_steps + 1)
    sigma_norm = np.empty(n_steps + 1)
    theta_norm = np.empty(n_steps + 1)
    theta_mean = np.empty(n_steps + 1)
    fp_iters = np.zeros(n_steps + 1, dtype=int)

    snapshot_steps = {int(round(t / cfg.dt)): t for t in cfg.snapshot_times
                      if 0 <= int(round(t / cfg.dt)) <= n_steps}
    snapshots = {}

    def record(n, theta, sigma):
        d = distance(theta, cfg.K)
        d_k[n] = d
        d_eps_k[n] = envelope_of_distance(d, eps)
        sigma_norm[n] = norm(sigma)
        theta_norm[n] = norm(theta)
        theta_mean[n] = theta.mean()
        if n in snapshot_steps:
            snapshots[snapshot_steps[n]] = theta

    theta = cfg.theta0
    sigma = yosida_gradient(theta, cfg.K, eps)
    record(0, theta, sigma)

    every = max(1, n_steps // PROGRESS_LINES)
    for n in range(n_steps):
        try:
            theta, sigma, iters = step(theta, (n + 1) * cfg.dt, cfg)
        except FixedPointError as e:
            raise SimulationError(n + 1, e) from e
        fp_iters[n + 1] = iters
        record(n + 1, theta, sigma)
        logging.debug("step %d: %d fixed-point iterations, d_K = %g",
                      n + 1, iters, d_k[n + 1])
        if (n + 1) % every == 0:
            logging.info("t = %.4g: d_K = %.4g", times[n + 1], d_k[n + 1])

    logging.info("Finished %d steps, max fixed-point iterations %d",
                 n_steps, int(fp_iters.max()))
    return TrajectoryRecord(
        times=times, d_k=d_k, d_eps_k=d_eps_k, sigma_norm=sigma_norm,
        theta_norm=theta_norm, fp_iters=fp_iters, theta_mean=theta_mean,
        theta_final=theta, sigma_final=sigma,
        u_final=g_alpha_field(theta, cfg.kappa, cfg.reg.alpha),
        snapshots=snapshots)
