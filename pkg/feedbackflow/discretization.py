# Uniform 1-D cell-centered grid, no-flux diffusion operator and the banded
# solve used by the implicit step.

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

# Midpoint quadrature for G_alpha: at least QUADRATURE_MIN_POINTS subintervals,
# no coarser than QUADRATURE_STEP, and at most QUADRATURE_MAX_POINTS. The cap
# keeps the step below 1e-3 |r| since it exceeds QUADRATURE_MIN_POINTS.
QUADRATURE_MIN_POINTS = 1000
QUADRATURE_MAX_POINTS = 100_000
QUADRATURE_STEP = 1e-4


class GridMismatchError(ValueError):
    def __init__(self, left, right):
        self._left = left
        self._right = right

    def __str__(self):
        return f"grid mismatch: {self._left} vs {self._right}"


@dataclass(frozen=True)
class SpatialGrid:
    n_cells: int
    domain_length: float

    def __post_init__(self):
        if self.n_cells < 2:
            raise ValueError(f"grid too small: n_cells = {self.n_cells} < 2")
        if not self.domain_length > 0:
            raise ValueError(
                f"domain_length must be positive, got {self.domain_length}")

    @property
    def cell_width(self) -> float:
        return self.domain_length / self.n_cells

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.n_cells, self.cell_width)

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.n_cells) + 0.5) * self.cell_width


def build_grid(n_cells: int, domain_length: float) -> SpatialGrid:
    return SpatialGrid(int(n_cells), float(domain_length))


# eq=False: numpy arrays do not compare as a single bool.
@dataclass(frozen=True, eq=False)
class GridFunction:
    values: np.ndarray
    grid: SpatialGrid

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.n_cells,):
            raise ValueError(
                f"expected {self.grid.n_cells} values, got shape "
                f"{values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid function has non-finite values")
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, value, grid):
        return cls(np.full(grid.n_cells, float(value)), grid)

    def mean(self) -> float:
        return float(np.dot(self.grid.weights, self.values)
                     / self.grid.domain_length)


def _check_same_grid(u, v):
    if u.grid != v.grid:
        raise GridMismatchError(u.grid, v.grid)


def inner_product(u: GridFunction, v: GridFunction) -> float:
    _check_same_grid(u, v)
    return float(np.dot(u.grid.weights, u.values * v.values))


def norm(u: GridFunction) -> float:
    return math.sqrt(inner_product(u, u))


@dataclass(frozen=True, eq=False)
class DiffusionOperator:
    # Symmetric tridiagonal matrix, stored by its main diagonal and the
    # (shared) off-diagonal.
    diagonal: np.ndarray
    off_diagonal: np.ndarray
    face_conductivities: np.ndarray
    grid: SpatialGrid

    def apply(self, theta: GridFunction) -> GridFunction:
        _check_same_grid(theta, self)
        x = theta.values
        out = self.diagonal * x
        out[:-1] += self.off_diagonal * x[1:]
        out[1:] += self.off_diagonal * x[:-1]
        return GridFunction(out, self.grid)

    def to_dense(self) -> np.ndarray:
        return (np.diag(self.diagonal)
                + np.diag(self.off_diagonal, 1)
                + np.diag(self.off_diagonal, -1))

    def banded(self, shift: float) -> np.ndarray:
        # Layout expected by scipy.linalg.solve_banded((1, 1), ...).
        ab = np.zeros((3, self.grid.n_cells))
        ab[0, 1:] = self.off_diagonal
        ab[1, :] = self.diagonal + shift
        ab[2, :-1] = self.off_diagonal
        return ab


def face_conductivity(theta: GridFunction, kappa, alpha: float) -> np.ndarray:
    """Arithmetic mean of the lifted diffusivity over each interior face."""
    if alpha < 0:
        raise ValueError(f"alpha must be nonnegative, got {alpha}")
    # alpha = 0 with a degenerate kappa is rejected by SimulationConfig; here
    # it only yields zero-conductivity faces.
    cell_values = kappa.lifted(theta.values, alpha)
    return 0.5 * (cell_values[:-1] + cell_values[1:])


def assemble_diffusion(face_conductivities, grid: SpatialGrid) -> DiffusionOperator:
    c = np.asarray(face_conductivities, dtype=float)
    if c.shape != (grid.n_cells - 1,):
        raise ValueError(
            f"expected {grid.n_cells - 1} face values, got shape {c.shape}")
    if np.any(c < 0):
        raise ValueError("negative conductivity")
    c = c / grid.cell_width**2
    diagonal = np.zeros(grid.n_cells)
    # No flux through either end: boundary faces contribute nothing.
    diagonal[:-1] += c
    diagonal[1:] += c
    return DiffusionOperator(diagonal, -c, np.asarray(face_conductivities,
                                                      dtype=float), grid)


def solve_shifted_system(A: DiffusionOperator, shift: float,
                         rhs: GridFunction) -> GridFunction:
    if not shift > 0:
        raise ValueError(f"shift must be positive, got {shift}")
    _check_same_grid(rhs, A)
    x = scipy.linalg.solve_banded((1, 1), A.banded(shift), rhs.values)
    return GridFunction(x, A.grid)


def g_alpha_eval(r: float, kappa, alpha: float) -> float:
    """G_alpha(r), the primitive of the lifted diffusivity."""
    if r == 0:
        return 0.0
    if kappa.is_constant:
        return float(kappa.lifted(np.array([0.0]), alpha)[0] * r)
    n = min(QUADRATURE_MAX_POINTS,
            max(QUADRATURE_MIN_POINTS, math.ceil(abs(r) / QUADRATURE_STEP)))
    h = r / n
    midpoints = (np.arange(n) + 0.5) * h
    return float(h * np.sum(kappa.lifted(midpoints, alpha)))


def g_alpha_field(theta: GridFunction, kappa, alpha: float) -> GridFunction:
    return GridFunction([g_alpha_eval(r, kappa, alpha) for r in theta.values],
                        theta.grid)
