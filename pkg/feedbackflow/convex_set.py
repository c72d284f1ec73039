# Obstacle and double-obstacle sets K = {v : v(x) in [lower, upper]} in the
# discrete L2 space of a grid: projection, distance, and the Moreau-Yosida
# regularization of the distance function.

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.optimize

from .discretization import GridFunction

# The brute-force envelope samples the segment [v, P_K v] at this many
# intervals before the golden-section refinement.
ORACLE_GRID_INTERVALS = 10_000


@dataclass(frozen=True)
class ObstacleSet:
    # None means the side is unbounded.
    lower: Optional[float] = None
    upper: Optional[float] = None

    def __post_init__(self):
        if self.lower is None and self.upper is None:
            raise ValueError("trivial constraint set: both bounds infinite")
        if self.lower is not None and self.upper is not None \
                and self.lower > self.upper:
            raise ValueError(
                f"empty constraint set: lower = {self.lower} > "
                f"upper = {self.upper}")

    @classmethod
    def from_bounds(cls, lower, upper):
        def bound(x, infinite_sign):
            if x is None:
                return None
            x = float(x)
            if math.isnan(x):
                raise ValueError("obstacle bound is NaN")
            if math.isinf(x):
                if math.copysign(1.0, x) != infinite_sign:
                    raise ValueError(f"obstacle bound {x} makes K empty")
                return None
            return x
        return cls(bound(lower, -1.0), bound(upper, 1.0))

    def clamp(self, values: np.ndarray) -> np.ndarray:
        out = values
        if self.lower is not None:
            out = np.maximum(out, self.lower)
        if self.upper is not None:
            out = np.minimum(out, self.upper)
        return out

    def contains(self, v: GridFunction) -> bool:
        return distance(v, self) == 0.0

    def describe(self) -> str:
        lo = "-inf" if self.lower is None else repr(self.lower)
        hi = "inf" if self.upper is None else repr(self.upper)
        return f"[{lo}, {hi}]"


@dataclass(frozen=True)
class RegularizationParams:
    epsilon: float
    alpha: float = 0.0

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ValueError(
                f"RegularizationParams: epsilon = {self.epsilon} violates "
                f"0 < epsilon < 1")
        if not 0 <= self.alpha < 1:
            raise ValueError(
                f"RegularizationParams: alpha = {self.alpha} violates "
                f"0 <= alpha < 1")


# The helpers below work on raw arrays whose last axis is the cell index, so
# that the oracle can evaluate many candidate points at once.

def _residual_values(values, K):
    return values - K.clamp(values)


def _distance_values(values, K, weights):
    q = _residual_values(values, K)
    return np.sqrt(np.sum(weights * q * q, axis=-1))


def project(v: GridFunction, K: ObstacleSet) -> GridFunction:
    return GridFunction(K.clamp(v.values), v.grid)


def residual(v: GridFunction, K: ObstacleSet) -> GridFunction:
    return GridFunction(_residual_values(v.values, K), v.grid)


def distance(v: GridFunction, K: ObstacleSet) -> float:
    return float(_distance_values(v.values, K, v.grid.weights))


def distance_gradient(v: GridFunction, K: ObstacleSet) -> GridFunction:
    q = _residual_values(v.values, K)
    d = math.sqrt(float(np.dot(v.grid.weights, q * q)))
    if d == 0:
        raise ValueError("gradient undefined on K")
    return GridFunction(q / d, v.grid)


def yosida_gradient(v: GridFunction, K: ObstacleSet, eps: float) -> GridFunction:
    """Gradient of the Moreau envelope: Q_K v / max(eps, d_K(v))."""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    q = _residual_values(v.values, K)
    d = math.sqrt(float(np.dot(v.grid.weights, q * q)))
    return GridFunction(q / max(eps, d), v.grid)


def envelope_of_distance(d: float, eps: float) -> float:
    # Integral of min(s/eps, 1) over [0, d].
    if d <= eps:
        return d * d / (2 * eps)
    return d - eps / 2


def moreau_envelope(v: GridFunction, K: ObstacleSet, eps: float) -> float:
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    return envelope_of_distance(distance(v, K), eps)


def moreau_oracle(v: GridFunction, K: ObstacleSet, eps: float) -> float:
    """Brute-force envelope: minimize d_K(z) + |z - v|^2 / (2 eps) over the
    segment from v to its projection. Only meant for testing."""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    weights = v.grid.weights
    x = v.values
    direction = K.clamp(x) - x

    def objective(t):
        z = x + np.multiply.outer(t, direction)
        step = z - x
        return (_distance_values(z, K, weights)
                + np.sum(weights * step * step, axis=-1) / (2 * eps))

    ts = np.linspace(0.0, 1.0, ORACLE_GRID_INTERVALS + 1)
    values = objective(ts)
    k = int(np.argmin(values))
    best = float(values[k])
    if 0 < k < ORACLE_GRID_INTERVALS:
        try:
            refined = scipy.optimize.minimize_scalar(
                lambda t: float(objective(np.float64(t))),
                bracket=(ts[k - 1], ts[k], ts[k + 1]), method="golden")
        except ValueError:
            # Flat bracket; the grid value is already as good as it gets.
            pass
        else:
            if 0.0 <= refined.x <= 1.0:
                best = min(best, float(refined.fun))
    return best
