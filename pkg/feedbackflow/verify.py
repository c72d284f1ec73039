# Post-hoc checks on a trajectory: hitting time against the reaching bound,
# decay slope, the discrete differential inequality for the envelope, and the
# testing-by-theta energy estimate.

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .convex_set import distance
from .model import SimulationConfig
from .solver import TrajectoryRecord

# Slack, in units of fp_tol, granted to inexact fixed-point solves.
FP_SLACK = 10


class VerificationError(AssertionError):
    def __init__(self, step_index, sigma_norm, required):
        self.step_index = step_index
        self.sigma_norm = sigma_norm
        self.required = required

    def __str__(self):
        return (f"sample {self.step_index}: |sigma| = {self.sigma_norm:.12g} "
                f"< {self.required:.12g} although the envelope is above "
                f"epsilon/2")


@dataclass(frozen=True)
class HittingReport:
    hit: bool
    t_star: Optional[float]
    bound: Optional[float]
    slope_fit: float
    max_violation: float
    worst_ratio: float
    # Reaching bound for the regularized run: first time the envelope drops
    # to epsilon/2 is at most (psi(0) - epsilon/2)/(rho - rho*).
    envelope_bound: Optional[float] = None


def _source_norms(traj, cfg):
    return np.array([cfg.f.norm_at(t, cfg.grid) for t in traj.times])


def _inequality_residuals(traj, cfg):
    if len(traj) < 2:
        return np.zeros(0)
    dt = traj.dt
    psi = traj.d_eps_k
    f_norm = _source_norms(traj, cfg)[1:]
    return (np.diff(psi) / dt + cfg.rho * traj.sigma_norm[1:] ** 2 - f_norm)


def verify_differential_inequality(traj: TrajectoryRecord,
                                   cfg: SimulationConfig) -> float:
    """Largest positive residual of psi' + rho |sigma|^2 <= |f|.

    Also requires |sigma| to be one (up to the fixed-point slack) wherever the
    envelope exceeds epsilon/2; raises VerificationError otherwise."""
    if len(traj) < 2:
        raise ValueError("need at least two samples")
    eps = cfg.reg.epsilon
    required = 1 - FP_SLACK * cfg.fp_tol / eps
    outside = np.nonzero(traj.d_eps_k[1:] > eps / 2)[0] + 1
    if outside.size:
        worst = outside[np.argmin(traj.sigma_norm[outside])]
        if traj.sigma_norm[worst] < required:
            raise VerificationError(int(worst), float(traj.sigma_norm[worst]),
                                    required)
    residuals = _inequality_residuals(traj, cfg)
    return max(0.0, float(residuals.max()))


def energy_diagnostic(traj: TrajectoryRecord, cfg: SimulationConfig) -> float:
    if len(traj) < 2:
        return 0.0
    dt = traj.dt
    old = traj.theta_norm[:-1]
    new = traj.theta_norm[1:]
    f_norm = _source_norms(traj, cfg)[1:]
    lhs = 0.5 * new ** 2
    rhs = (0.5 * old ** 2 + dt * (f_norm + cfg.rho) * new
           + FP_SLACK * cfg.fp_tol * new)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rhs > 0, lhs / rhs, np.where(lhs > 0, np.inf, 0.0))
    return float(ratio.max())


def pre_hitting_slope(times, d_k, eps, hit_index=None) -> float:
    end = len(d_k) if hit_index is None else hit_index
    window = np.nonzero(d_k[:end] > eps)[0]
    if window.size < 2:
        return math.nan
    return float(np.polyfit(times[window], d_k[window], 1)[0])


def detect_hitting(traj: TrajectoryRecord,
                   cfg: SimulationConfig) -> HittingReport:
    eps = cfg.reg.epsilon
    d = traj.d_k
    below = np.nonzero(d <= cfg.hit_tol)[0]
    hit_index = int(below[0]) if below.size else None
    t_star = float(traj.times[hit_index]) if hit_index is not None else None

    rho_star = cfg.f.rho_star_bound(traj.times, cfg.grid)
    bound = envelope_bound = None
    if cfg.rho > rho_star:
        bound = float(d[0]) / (cfg.rho - rho_star)
        envelope_bound = max(0.0, float(traj.d_eps_k[0]) - eps / 2) \
            / (cfg.rho - rho_star)

    residuals = _inequality_residuals(traj, cfg)
    max_violation = max(0.0, float(residuals.max())) if residuals.size else 0.0

    if t_star is None:
        logging.info("No hit within horizon %g (final d_K = %g)",
                     traj.times[-1], d[-1])
    else:
        logging.info("Hit at t = %g (bound %s)", t_star, bound)
    return HittingReport(
        hit=hit_index is not None, t_star=t_star, bound=bound,
        slope_fit=pre_hitting_slope(traj.times, d, eps, hit_index),
        max_violation=max_violation,
        worst_ratio=energy_diagnostic(traj, cfg),
        envelope_bound=envelope_bound)


def sufficient_gain(cfg: SimulationConfig) -> bool:
    # rho > rho* + d_K(theta0)/T guarantees the hit happens before T.
    if cfg.T_final <= 0:
        return False
    d0 = distance(cfg.theta0, cfg.K)
    return cfg.rho > cfg.rho_star + d0 / cfg.T_final
