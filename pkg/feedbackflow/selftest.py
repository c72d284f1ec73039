# Seeded battery of checks on the closed-form Moreau-Yosida formulas against
# brute force, finite differences and the Lipschitz bound.

import sys

import numpy as np

from .convex_set import (ObstacleSet, distance, moreau_envelope,
                         moreau_oracle, yosida_gradient)
from .discretization import GridFunction, build_grid, norm

ORACLE_CASES = 100
LIPSCHITZ_CASES = 1000
GRADIENT_CASES = 100
THRESHOLD_CASES = 200

FD_STEP = 1e-7


def _case_rng(seed, check_index, case):
    return np.random.default_rng([seed, check_index, case])


def random_obstacle(rng):
    kind = rng.integers(4)
    a, b = np.sort(rng.uniform(-2.0, 2.0, size=2))
    if kind == 0:
        return ObstacleSet(lower=float(a))
    if kind == 1:
        return ObstacleSet(upper=float(b))
    if kind == 2:
        return ObstacleSet(float(a), float(b))
    return ObstacleSet(float(a), float(a))


def random_field(rng, grid):
    # Log-uniform scale so that distances land on both sides of epsilon.
    scale = 10 ** rng.uniform(-3, 0.5)
    return GridFunction(rng.uniform(-2, 2) + scale * rng.standard_normal(
        grid.n_cells), grid)


def random_case(rng):
    grid = build_grid(int(rng.integers(2, 17)), float(rng.uniform(0.5, 3.0)))
    K = random_obstacle(rng)
    eps = float(10 ** rng.uniform(-2, np.log10(0.9)))
    return grid, K, eps, random_field(rng, grid)


def _oracle_agreement(rng, envelope):
    grid, K, eps, v = random_case(rng)
    d = distance(v, K)
    err = abs(envelope(v, K, eps) - moreau_oracle(v, K, eps))
    return err / (1 + d), 1e-6


def _lipschitz(rng, envelope):
    grid, K, eps, u = random_case(rng)
    v = random_field(rng, grid)
    gap = norm(GridFunction(u.values - v.values, grid))
    if gap == 0:
        return 0.0, 1.0
    du = yosida_gradient(u, K, eps).values - yosida_gradient(v, K, eps).values
    ratio = norm(GridFunction(du, grid)) / gap
    return ratio * eps, 1 + 1e-9


def _gradient(rng, envelope):
    grid, K, eps, v = random_case(rng)
    h = rng.standard_normal(grid.n_cells)
    h /= norm(GridFunction(h, grid))
    plus = GridFunction(v.values + FD_STEP * h, grid)
    minus = GridFunction(v.values - FD_STEP * h, grid)
    fd = (envelope(plus, K, eps) - envelope(minus, K, eps)) / (2 * FD_STEP)
    g = float(np.dot(grid.weights, yosida_gradient(v, K, eps).values * h))
    return abs(fd - g) / (1 + abs(g)), 1e-5


def _threshold(rng, envelope):
    grid, K, eps, v = random_case(rng)
    d = distance(v, K)
    env = envelope(v, K, eps)
    unit = abs(norm(yosida_gradient(v, K, eps)) - 1) <= 1e-12
    ok = (unit == (d > eps) or d == eps) and ((d > eps) == (env > eps / 2))
    lower = max(0.0, d - eps / 2)
    ok = ok and lower - 1e-12 <= env <= d + 1e-12
    return 0.0 if ok else 1.0, 0.5


CHECKS = (
    ("oracle-agreement", _oracle_agreement, ORACLE_CASES),
    ("yosida-lipschitz", _lipschitz, LIPSCHITZ_CASES),
    ("gradient-finite-difference", _gradient, GRADIENT_CASES),
    ("threshold-characterization", _threshold, THRESHOLD_CASES),
)


def run_selftest(seed=0, out=None, envelope=moreau_envelope) -> int:
    """Run every check and print one line each; returns the exit code."""
    out = out or sys.stdout
    failed = 0
    for index, (name, check, cases) in enumerate(CHECKS):
        worst_case, worst_score, limit = 0, -np.inf, None
        for case in range(cases):
            score, limit_case = check(_case_rng(seed, index, case), envelope)
            if score / limit_case > worst_score:
                worst_case, worst_score, limit = case, score / limit_case, \
                    limit_case
        passed = worst_score <= 1.0
        status = "PASS" if passed else "FAIL"
        print(f"{status} {name}: {cases} cases, worst ratio to limit "
              f"{worst_score:.3e} (replay: seed={seed} check={index} "
              f"case={worst_case})", file=out)
        failed += not passed
    if failed:
        print(f"selftest: {failed} of {len(CHECKS)} checks failed", file=out)
        return 1
    print(f"selftest: all {len(CHECKS)} checks passed", file=out)
    return 0
