"""Operator discrepancies between distributions over S x A and between policies."""
import logging
from typing import List, NamedTuple, Sequence, Tuple

import numpy as np

from lowrank_ope.common import InvalidArgumentError, support_mask
from lowrank_ope.estimation.norms import operator_norm
from lowrank_ope.estimation.simplex import FeasibleSet, RowSupportSimplex, SupportSimplex

# Tolerance on the total mass of an input distribution.
DISTRIBUTION_TOLERANCE = 1e-9


class DiscrepancyConfig(NamedTuple):
    max_iters: int = 5000
    # The first step is step_size times the objective at the starting point.
    step_size: float = 0.5
    random_restarts: int = 3
    # Stop a run once the best value improved by less than improvement_tol in a window.
    patience: int = 200
    improvement_tol: float = 1e-8
    # Singular values closer than this share the subgradient.
    tie_tol: float = 1e-8
    seed: int = 0


class DiscrepancyResult(NamedTuple):
    value: float
    minimizer: np.ndarray
    iterations: int
    converged: bool
    # value minus the best dual lower bound found; zero means certified optimal.
    certificate_gap: float


def _check_distribution(x: np.ndarray, name: str) -> None:
    if x.ndim != 2 or np.any(x < 0) or abs(float(x.sum()) - 1) > DISTRIBUTION_TOLERANCE:
        raise InvalidArgumentError("{} must be a distribution over S x A".format(name))


def _check_row_stochastic(x: np.ndarray, name: str) -> None:
    if x.ndim != 2 or np.any(x < 0) \
            or np.max(np.abs(x.sum(axis=1) - 1)) > DISTRIBUTION_TOLERANCE:
        raise InvalidArgumentError("{} must be row-stochastic".format(name))


def _subgradient(diff: np.ndarray, tie_tol: float) -> np.ndarray:
    """A unit-nuclear-norm subgradient of ||.||_op at diff."""
    u, sigma, vt = np.linalg.svd(diff)
    grad = np.outer(u[:, 0], vt[0])
    if sigma.size > 1 and sigma[0] - sigma[1] <= tie_tol:
        grad = 0.5 * (grad + np.outer(u[:, 1], vt[1]))
    return grad


def _subgradient_descent(feasible: FeasibleSet, q: np.ndarray, start: np.ndarray,
                         config: DiscrepancyConfig) -> Tuple[np.ndarray, float, float, int, bool]:
    """One projected subgradient run from start.

    Returns (best point, best value, best dual lower bound, iterations, converged).
    Every subgradient W has ||W||_* <= 1, so min_g <W, g> - <W, q> lower-bounds the
    optimum; the step-weighted average of the W is tried as a dual point as well.
    """
    x = feasible.project(start)
    best_x, best_value = x, operator_norm(x - q)
    lower = 0.0
    avg_grad = np.zeros_like(q)
    step_sum = 0.0
    step0 = config.step_size * best_value
    window_best = best_value
    converged = False
    k = 0
    for k in range(1, config.max_iters + 1):
        if best_value == 0:
            converged = True
            break
        grad = _subgradient(x - q, config.tie_tol)
        step = step0 / np.sqrt(k)
        avg_grad += step * grad
        step_sum += step
        for dual in (grad, avg_grad / step_sum):
            lower = max(lower, feasible.linear_min(dual) - float(np.sum(dual * q)))

        x = feasible.project(x - step * grad)
        value = operator_norm(x - q)
        if value < best_value:
            best_x, best_value = x, value
        if best_value - lower <= config.improvement_tol:
            converged = True
            break
        if k % config.patience == 0:
            if window_best - best_value < config.improvement_tol:
                converged = True
                break
            window_best = best_value
    return best_x, best_value, lower, k, converged


def _minimize(feasible: FeasibleSet, q: np.ndarray, starts: Sequence[np.ndarray],
              config: DiscrepancyConfig) -> DiscrepancyResult:
    rng = np.random.default_rng(config.seed)
    all_starts: List[np.ndarray] = list(starts)
    all_starts += [feasible.random_point(rng) for _ in range(config.random_restarts)]

    best_x = feasible.project(all_starts[0])
    best_value = np.inf
    best_lower = 0.0
    iterations = 0
    converged = False
    values = []
    for start in all_starts:
        x, value, lower, iters, run_converged = _subgradient_descent(feasible, q, start, config)
        iterations += iters
        values.append(value)
        best_lower = max(best_lower, lower)
        if value < best_value:
            best_x, best_value, converged = x, value, run_converged
    logging.debug("discrepancy restarts ended at %s", ["%.6g" % v for v in values])
    return DiscrepancyResult(
            value=float(best_value),
            minimizer=best_x,
            iterations=iterations,
            converged=converged,
            certificate_gap=float(max(best_value - best_lower, 0.0)))


def operator_discrepancy(p: np.ndarray, q: np.ndarray,
                         config: DiscrepancyConfig = DiscrepancyConfig(),
                         extra_starts: Sequence[np.ndarray] = ()) -> DiscrepancyResult:
    """min ||g - q||_op over distributions g with supp(g) inside supp(p).

    Restarts from p, from q restricted to supp(p), from any extra_starts, and from
    random feasible points.
    """
    _check_distribution(p, "p")
    _check_distribution(q, "q")
    if p.shape != q.shape:
        raise InvalidArgumentError("p and q must have the same shape")
    feasible = SupportSimplex(support_mask(p))
    if np.all(feasible.mask[support_mask(q)]):
        # q is feasible once its sub-threshold mass outside supp(p) is dropped.
        g = feasible.restrict(q) if np.any(q[~feasible.mask] != 0) else q.copy()
        return DiscrepancyResult(operator_norm(g - q), g, 0, True, 0.0)
    starts = [p, feasible.restrict(q)] + list(extra_starts)
    return _minimize(feasible, q, starts, config)


def empirical_operator_discrepancy(p: np.ndarray, q: np.ndarray) -> float:
    """||p - q||_op."""
    if p.shape != q.shape:
        raise InvalidArgumentError("p and q must have the same shape")
    return operator_norm(p - q)


def policy_operator_discrepancy(pi_beta: np.ndarray, pi_theta: np.ndarray,
                                config: DiscrepancyConfig = DiscrepancyConfig()
                                ) -> DiscrepancyResult:
    """min ||pi - pi_theta||_op over policies pi with supp(pi) inside supp(pi_beta), rowwise."""
    _check_row_stochastic(pi_beta, "behavior policy")
    _check_row_stochastic(pi_theta, "target policy")
    if pi_beta.shape != pi_theta.shape:
        raise InvalidArgumentError("policies must have the same shape")
    feasible = RowSupportSimplex(support_mask(pi_beta))
    if np.all(feasible.mask[support_mask(pi_theta)]):
        g = feasible.restrict(pi_theta) if np.any(pi_theta[~feasible.mask] != 0) \
            else pi_theta.copy()
        return DiscrepancyResult(operator_norm(g - pi_theta), g, 0, True, 0.0)
    return _minimize(feasible, pi_theta, [pi_beta, feasible.restrict(pi_theta)], config)


def concentrability_coefficient(rho: np.ndarray, d: np.ndarray) -> float:
    """max d/rho, infinite when d puts mass outside supp(rho)."""
    rho_support = support_mask(rho)
    if np.any(support_mask(d) & ~rho_support):
        return float("inf")
    return float(np.max(d[rho_support] / rho[rho_support]))
