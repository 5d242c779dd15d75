#!/usr/bin/env python3
import numpy as np

from lowrank_ope.common import InvalidArgumentError
from lowrank_ope.estimation import (
        concentrability_coefficient, empirical_operator_discrepancy, nuclear_norm,
        operator_discrepancy, operator_norm, policy_operator_discrepancy,
)

RNG = np.random.default_rng(77)


def simplex_grid(step: float) -> np.ndarray:
    """All points of the 2-simplex on a grid, as an N x 3 array."""
    ticks = np.arange(0, 1 + step / 2, step)
    x, y = np.meshgrid(ticks, ticks, indexing="ij")
    keep = x + y <= 1 + 1e-12
    x, y = x[keep], y[keep]
    return np.stack([x, y, np.clip(1 - x - y, 0, None)], axis=1)


def grid_discrepancy(support: np.ndarray, q: np.ndarray, step: float) -> float:
    """min ||g - q||_op over grid distributions supported on three cells."""
    points = simplex_grid(step)
    g = np.zeros((len(points),) + q.shape)
    rows, cols = np.nonzero(support)
    g[:, rows, cols] = points
    return float(np.min(np.linalg.norm(g - q[None], 2, axis=(1, 2))))


def test_uniform_p_gives_zero() -> None:
    q = RNG.dirichlet(np.ones(12)).reshape(3, 4)
    result = operator_discrepancy(np.full((3, 4), 1 / 12), q)
    assert result.value == 0 and np.array_equal(result.minimizer, q)


def test_zero_iff_support_contained() -> None:
    p = np.array([[0.5, 0.5, 0.0], [0.0, 0.0, 0.0]])
    inside = np.array([[0.2, 0.8, 0.0], [0.0, 0.0, 0.0]])
    assert operator_discrepancy(p, inside).value == 0
    outside = np.array([[0.2, 0.7, 0.0], [0.1, 0.0, 0.0]])
    assert operator_discrepancy(p, outside).value > 1e-3


def test_sub_threshold_mass_is_dropped() -> None:
    p = np.array([[0.5, 0.5], [0.0, 0.0]])
    q = np.array([[0.5, 0.5 - 1e-13], [1e-13, 0.0]])
    result = operator_discrepancy(p, q)
    assert result.minimizer[1, 0] == 0 and abs(result.minimizer.sum() - 1) <= 1e-15
    assert result.value <= 1e-12

    beta = np.array([[1.0, 0.0], [0.5, 0.5]])
    theta = np.array([[1 - 1e-13, 1e-13], [0.5, 0.5]])
    policy = policy_operator_discrepancy(beta, theta)
    assert np.array_equal(policy.minimizer[0], [1.0, 0.0]) and policy.value <= 1e-12


def test_matches_grid_search() -> None:
    for _ in range(10):
        cells = RNG.choice(9, size=3, replace=False)
        p = np.zeros(9)
        p[cells] = RNG.dirichlet(np.ones(3))
        p = p.reshape(3, 3)
        q = RNG.dirichlet(np.ones(9)).reshape(3, 3)
        result = operator_discrepancy(p, q)
        oracle = grid_discrepancy(p > 0, q, 0.002)
        assert abs(result.value - oracle) <= 5e-3, (result.value, oracle)
        assert result.value <= operator_norm(p - q) + 1e-9
        assert abs(result.minimizer.sum() - 1) <= 1e-9
        assert np.all(result.minimizer[p == 0] == 0)
        assert abs(result.value - operator_norm(result.minimizer - q)) <= 1e-9
        assert result.certificate_gap >= 0


def test_two_by_two_family() -> None:
    p = np.array([[0.5, 0.5], [0.0, 0.0]])
    q = np.array([[0.0, 0.0], [0.0, 1.0]])
    xs = np.arange(0, 1 + 1e-9, 1e-4)
    family = np.zeros((len(xs), 2, 2))
    family[:, 0, 0], family[:, 0, 1] = xs, 1 - xs
    oracle = np.min(np.linalg.norm(family - q[None], 2, axis=(1, 2)))
    assert abs(operator_discrepancy(p, q).value - oracle) <= 1e-3


def test_depends_only_on_support() -> None:
    cells = np.array([0, 4, 5])
    p, p_other = np.zeros(9), np.zeros(9)
    p[cells], p_other[cells] = [0.2, 0.3, 0.5], [0.6, 0.3, 0.1]
    q = RNG.dirichlet(np.ones(9)).reshape(3, 3)
    first = operator_discrepancy(p.reshape(3, 3), q).value
    second = operator_discrepancy(p_other.reshape(3, 3), q).value
    assert abs(first - second) <= 5e-3


def test_hoelder_operational_bound() -> None:
    p = np.zeros((4, 4))
    p[:2, :2] = 0.25
    q = RNG.dirichlet(np.ones(16)).reshape(4, 4)
    result = operator_discrepancy(p, q)
    for _ in range(20):
        m = RNG.normal(size=(4, 1)) @ RNG.normal(size=(1, 4))
        gap = abs(np.sum(result.minimizer * m) - np.sum(q * m))
        assert gap <= result.value * nuclear_norm(m) + 1e-8


def test_empirical_discrepancy() -> None:
    p = RNG.dirichlet(np.ones(6)).reshape(2, 3)
    assert empirical_operator_discrepancy(p, p) == 0
    a, b = np.zeros((2, 2)), np.zeros((2, 2))
    a[0, 0], b[1, 1] = 1, 1
    assert abs(empirical_operator_discrepancy(a, b) - 1) < 1e-12
    q = RNG.dirichlet(np.ones(6)).reshape(2, 3)
    assert abs(empirical_operator_discrepancy(p, q)
               - np.linalg.svd(p - q, compute_uv=False)[0]) < 1e-10
    assert empirical_operator_discrepancy(p, q) >= operator_discrepancy(p, q).value - 1e-6


def test_invalid_distribution() -> None:
    try:
        operator_discrepancy(np.ones((2, 2)), np.full((2, 2), 0.25))
    except InvalidArgumentError:
        pass
    else:
        assert False, "p does not sum to one"


def test_policy_discrepancy() -> None:
    theta = RNG.dirichlet(np.ones(3), size=2)
    full = policy_operator_discrepancy(np.full((2, 3), 1 / 3), theta)
    assert full.value == 0 and np.array_equal(full.minimizer, theta)

    beta = np.array([[0.5, 0.5, 0.0], [0.3, 0.7, 0.0]])
    target = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]])
    result = policy_operator_discrepancy(beta, target)
    xs = np.arange(0, 1 + 1e-9, 0.005)
    x, y = np.meshgrid(xs, xs, indexing="ij")
    grid = np.zeros(x.shape + (2, 3))
    grid[..., 0, 0], grid[..., 0, 1] = x, 1 - x
    grid[..., 1, 0], grid[..., 1, 1] = y, 1 - y
    oracle = np.min(np.linalg.norm(grid - target, 2, axis=(-2, -1)))
    assert abs(result.value - oracle) <= 5e-3
    assert np.allclose(result.minimizer.sum(axis=1), 1, atol=1e-9)
    assert np.all(result.minimizer[:, 2] == 0)


def test_policy_discrepancy_empty_row() -> None:
    try:
        policy_operator_discrepancy(np.array([[1.0, 0.0], [0.0, 0.0]]),
                                    np.array([[0.5, 0.5], [0.5, 0.5]]))
    except InvalidArgumentError:
        pass
    else:
        assert False, "a behavior row with no support is invalid"


def test_concentrability() -> None:
    rho = np.array([[0.5, 0.5], [0.0, 0.0]])
    assert concentrability_coefficient(rho, np.array([[0.25, 0.75], [0.0, 0.0]])) == 1.5
    assert concentrability_coefficient(rho, np.array([[0.5, 0.0], [0.5, 0.0]])) == np.inf


if __name__ == '__main__':
    for name, test in list(globals().items()):
        if name.startswith("test_"):
            test()
    print("discrepancy tests passed")
