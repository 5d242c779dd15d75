"""Max-norm-constrained matrix estimation from partially constrained observations.

Equality mode solves min ||M||_max subject to M = Y on the support and
||M||_inf <= L by bisection over a budget tau. Feasibility at tau is searched in
factored form M = U V^T with every row of U and V in the l2 ball of radius
sqrt(tau), which makes ||U||_{2->inf} ||V||_{2->inf} <= tau by construction.

InnerProduct mode constrains only <rho, M>, so its smallest-max-norm point is a
constant matrix carrying no information about Z. There the estimate is the
smallest-max-norm completion of Z from supp(rho), or the factored fit to Z at
the final budget sqrt(d) L when no completion stays under it, moved onto the
constraint by the repair step.
"""
import logging
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from lowrank_ope.common import ConstraintMode, InvalidArgumentError, SUPPORT_THRESHOLD
from lowrank_ope.estimation.norms import (
        factorization_value, max_norm_bound, nuclear_norm, svd_factors,
)

# Upper limit on bisection halvings.
MAX_BISECTIONS = 60
# A descent run stops once its loss fell by less than this fraction over STALL_WINDOW steps.
STALL_TOLERANCE = 1e-9
STALL_WINDOW = 100
# Backtracking gives up below this step size.
MIN_STEP = 1e-14


class MEProblem(NamedTuple):
    """A matrix estimation instance.

    observed holds Y_t (Equality mode) or Z_t (InnerProduct mode) on supp(weights)
    and NaN elsewhere.
    """
    weights: np.ndarray
    observed: np.ndarray
    entry_bound: float
    rank_param: int
    mode: ConstraintMode
    slack: float = 0.0

    @property
    def support(self) -> np.ndarray:
        return self.weights > SUPPORT_THRESHOLD

    def validate(self) -> None:
        if self.weights.shape != self.observed.shape:
            raise InvalidArgumentError("weights and observations differ in shape")
        if np.any(self.weights < 0) or abs(float(self.weights.sum()) - 1) > 1e-9:
            raise InvalidArgumentError("weights must be a distribution")
        if not np.all(np.isfinite(self.observed[self.support])):
            raise InvalidArgumentError("observations must be defined on the weight support")
        if self.entry_bound <= 0:
            raise InvalidArgumentError("entry bound must be positive")
        if self.slack < 0:
            raise InvalidArgumentError("slack must be nonnegative")

    def weighted_observation(self) -> float:
        """<rho, observed> over the support."""
        return float(np.sum(self.weights[self.support] * self.observed[self.support]))


class SolverConfig(NamedTuple):
    # eps_feas: allowed constraint violation of the returned estimate.
    tolerance: float = 1e-7
    max_iters: int = 2000
    restarts: int = 3
    # Columns of the factors; 0 means min(S, A).
    factor_rank: int = 0
    # eps_bis; 0 means 1e-4 * L.
    bisect_tol: float = 0.0
    box_weight: float = 10.0
    seed: int = 0


class MESolution(NamedTuple):
    estimate: np.ndarray
    # Certified upper bound on ||estimate||_max.
    max_norm_value: float
    constraint_residual: float
    iterations: int
    converged: bool
    # The smallest budget at which a feasible point was found.
    budget: float


class SolverError(Exception):
    """Indicates no feasible estimate was found under the max-norm cap."""

    def __init__(self, message: str, best_residual: float, step: Optional[int] = None) -> None:
        super(SolverError, self).__init__(message)
        self.best_residual = best_residual
        self.step = step


def constraint_residual(problem: MEProblem, m: np.ndarray) -> float:
    """How far m is from satisfying the mode constraint (the box is checked separately)."""
    support = problem.support
    if problem.mode is ConstraintMode.EQUALITY:
        return float(np.max(np.abs(m[support] - problem.observed[support])))
    gap = float(np.sum(problem.weights[support] * m[support])) - problem.weighted_observation()
    return max(0.0, abs(gap) - problem.slack)


def _box_excess(problem: MEProblem, m: np.ndarray) -> float:
    return max(0.0, float(np.max(np.abs(m))) - problem.entry_bound)


def _correction_norm(e: np.ndarray) -> float:
    """An upper bound on ||E||_max: each entry is a rank-one term of max norm |E_ij|."""
    return min(float(np.sum(np.abs(e))), nuclear_norm(e))


def lower_bound(problem: MEProblem) -> float:
    """A lower bound on ||M||_max over feasible M, using ||M||_max >= ||M||_inf."""
    support = problem.support
    if problem.mode is ConstraintMode.EQUALITY:
        return float(np.max(np.abs(problem.observed[support])))
    return max(0.0, abs(problem.weighted_observation()) - problem.slack)


def _constant_candidate(problem: MEProblem) -> Optional[np.ndarray]:
    """A constant answer, when the constraint pins one down.

    Equality mode: a constant observation c makes c J optimal with max norm |c|.
    InnerProduct mode: a slack of at least L + |<rho, Z>| admits every matrix in
    the box, and the zero matrix is returned.
    """
    shape = problem.weights.shape
    if problem.mode is ConstraintMode.EQUALITY:
        values = problem.observed[problem.support]
        if np.max(values) - np.min(values) > 0 or abs(values[0]) > problem.entry_bound:
            return None
        return np.full(shape, float(values[0]))
    if problem.slack >= problem.entry_bound + abs(problem.weighted_observation()):
        return np.zeros(shape)
    return None


class _Attempt(NamedTuple):
    estimate: np.ndarray
    certificate: float
    residual: float
    left: np.ndarray
    right: np.ndarray


class _FactoredFit(object):
    """Projected gradient descent on the factors for one budget."""

    def __init__(self, problem: MEProblem, config: SolverConfig, slack_budget: float) -> None:
        self.problem = problem
        self.config = config
        self.slack_budget = slack_budget
        self.support = problem.support
        self.filled = np.where(self.support, problem.observed, 0.0)
        if problem.mode is ConstraintMode.EQUALITY:
            self.fit_weights = self.support.astype(float)
        else:
            # rho scaled to a unit maximum so the step size does not depend on the support size.
            weights = np.where(self.support, problem.weights, 0.0)
            self.fit_weights = weights / float(np.max(weights))

    def loss_and_gradient(self, m: np.ndarray) -> Tuple[float, np.ndarray]:
        residual = self.fit_weights * (m - self.filled)
        loss = 0.5 * float(np.sum(residual * (m - self.filled)))
        excess = np.sign(m) * np.maximum(np.abs(m) - self.problem.entry_bound, 0.0)
        loss += 0.5 * self.config.box_weight * float(np.sum(excess ** 2))
        return loss, residual + self.config.box_weight * excess

    def fit_error(self, m: np.ndarray) -> float:
        """Equality mode: the size of the repair step m would need, in max-norm terms.

        InnerProduct mode: the largest distance to Z on the support.
        """
        gaps = np.abs(m - self.filled)[self.support]
        fit = float(np.sum(gaps)) if self.problem.mode is ConstraintMode.EQUALITY \
            else float(np.max(gaps))
        return fit + float(np.sum(np.maximum(np.abs(m) - self.problem.entry_bound, 0.0)))

    def run(self, tau: float, left: np.ndarray, right: np.ndarray
            ) -> Tuple[np.ndarray, np.ndarray, int]:
        radius = np.sqrt(tau)
        left, right = _project_rows(left, radius), _project_rows(right, radius)
        step = 1.0 / max(tau, 1e-3)
        loss, grad = self.loss_and_gradient(left @ right.T)
        window_loss = loss
        it = 0
        for it in range(1, self.config.max_iters + 1):
            if self.fit_error(left @ right.T) <= self.slack_budget or loss <= 1e-30:
                break
            grad_left, grad_right = grad @ right, grad.T @ left
            while True:
                new_left = _project_rows(left - step * grad_left, radius)
                new_right = _project_rows(right - step * grad_right, radius)
                d_left, d_right = new_left - left, new_right - right
                new_loss, new_grad = self.loss_and_gradient(new_left @ new_right.T)
                model = loss + float(np.sum(grad_left * d_left) + np.sum(grad_right * d_right)) \
                    + (float(np.sum(d_left ** 2) + np.sum(d_right ** 2))) / (2 * step)
                if new_loss <= model or step < MIN_STEP:
                    break
                step *= 0.5
            if step < MIN_STEP:
                break
            left, right, loss, grad = new_left, new_right, new_loss, new_grad
            step *= 1.2
            if it % STALL_WINDOW == 0:
                if window_loss - loss <= STALL_TOLERANCE * window_loss:
                    break
                window_loss = loss
        return left, right, it


def _project_rows(factor: np.ndarray, radius: float) -> np.ndarray:
    norms = np.linalg.norm(factor, axis=1, keepdims=True)
    scale = np.minimum(1.0, radius / np.maximum(norms, 1e-300))
    return factor * scale


def _fit_columns(factor: np.ndarray, rank: int) -> np.ndarray:
    if factor.shape[1] >= rank:
        return factor[:, :rank]
    return np.hstack([factor, np.zeros((factor.shape[0], rank - factor.shape[1]))])


def _repair(problem: MEProblem, raw: np.ndarray, raw_bound: float) -> Tuple[np.ndarray, float]:
    """Moves a near-feasible product onto the constraints; returns (M, max-norm bound).

    raw_bound certifies ||raw||_max. Equality mode overwrites the support and clips
    into the box; InnerProduct mode clips and then mixes in the constant matrix
    <rho, Z> J, the center of the constraint, as far as needed.
    """
    bound = problem.entry_bound
    if problem.mode is ConstraintMode.EQUALITY:
        m = np.clip(np.where(problem.support, problem.observed, raw), -bound, bound)
        return m, raw_bound + _correction_norm(m - raw)

    clipped = np.clip(raw, -bound, bound)
    clipped_bound = raw_bound + _correction_norm(clipped - raw)
    center = float(np.clip(problem.weighted_observation(), -bound, bound))
    gap = float(np.sum(problem.weights * np.where(problem.support, clipped, 0.0))) \
        - problem.weighted_observation()
    if abs(gap) <= problem.slack:
        return clipped, clipped_bound
    mix = 1.0 - problem.slack / abs(gap)
    m = (1 - mix) * clipped + mix * center
    return m, (1 - mix) * clipped_bound + mix * abs(center)


def _certify(problem: MEProblem, left: np.ndarray, right: np.ndarray) -> _Attempt:
    raw = left @ right.T
    m, bound = _repair(problem, raw, factorization_value(left, right))
    certificate = min(bound, max_norm_bound(m, problem.rank_param).upper)
    residual = max(constraint_residual(problem, m), _box_excess(problem, m))
    return _Attempt(m, certificate, residual, left, right)


def _within_cap(problem: MEProblem, attempt: _Attempt, cap: float) -> _Attempt:
    """Mixes an InnerProduct estimate toward its center until the certificate is <= cap.

    The center <rho, Z> J lies in the box and meets the constraint exactly, so the
    mix keeps both.
    """
    if attempt.certificate <= cap:
        return attempt
    center = float(np.clip(problem.weighted_observation(), -problem.entry_bound,
                           problem.entry_bound))
    mix = (attempt.certificate - cap) / (attempt.certificate - abs(center))
    m = (1 - mix) * attempt.estimate + mix * center
    residual = max(constraint_residual(problem, m), _box_excess(problem, m))
    return attempt._replace(estimate=m, certificate=cap, residual=residual)


def _fit_under_cap(problem: MEProblem, config: SolverConfig, cap: float,
                   rank: int) -> MESolution:
    """InnerProduct mode: the factored fit to Z on supp(rho) under the budget cap.

    Off-support entries come from the low-rank completion. Starts are the
    spectral factors of Z filled with zeros, then config.restarts random ones;
    the first start that matches Z on the support within config.tolerance wins,
    otherwise the one with the smallest fit loss.
    """
    S, A = problem.weights.shape
    fit = _FactoredFit(problem, config, config.tolerance)
    rng = np.random.default_rng(config.seed)
    spectral_left, spectral_right = (_fit_columns(f, rank) for f in svd_factors(fit.filled))
    starts: List[Tuple[np.ndarray, np.ndarray]] = [(spectral_left, spectral_right)]
    scale = np.sqrt(cap / rank)
    for _ in range(config.restarts):
        starts.append((rng.uniform(-1, 1, size=(S, rank)) * scale,
                       rng.uniform(-1, 1, size=(A, rank)) * scale))

    iterations = 0
    best: Optional[_Attempt] = None
    best_loss = np.inf
    for left, right in starts:
        left, right, used = fit.run(cap, left, right)
        iterations += used
        raw = left @ right.T
        loss = fit.loss_and_gradient(raw)[0]
        if loss < best_loss:
            best, best_loss = _certify(problem, left, right), loss
        if fit.fit_error(raw) <= config.tolerance:
            break
    assert best is not None
    converged = fit.fit_error(best.left @ best.right.T) <= config.tolerance
    best = _within_cap(problem, best, cap)
    if best.residual > config.tolerance:
        raise SolverError(
            "no estimate meets the inner-product constraint under the cap {:.6g}".format(cap),
            best.residual)
    logging.debug("fit to Z under the cap %.6g: loss %.3g after %d iterations",
                  cap, best_loss, iterations)
    return MESolution(
            estimate=best.estimate,
            max_norm_value=float(best.certificate),
            constraint_residual=float(best.residual),
            iterations=iterations,
            converged=converged,
            budget=float(cap))


def _complete_observations(problem: MEProblem, config: SolverConfig, cap: float,
                           rank: int) -> MESolution:
    """InnerProduct mode: the smallest-max-norm completion of Z, moved onto the constraint.

    Falls back to _fit_under_cap when no completion of Z has a certificate
    within the cap.
    """
    bound = problem.entry_bound
    observed = np.clip(problem.observed, -bound, bound)
    completion: Optional[MESolution] = None
    if np.all(problem.support):
        # Z pins every entry; only its certificate is left to compute.
        certificate = max_norm_bound(observed, problem.rank_param).upper
        completion = MESolution(observed, certificate, 0.0, 0, True, certificate)
    else:
        try:
            completion = solve_me(problem._replace(
                    observed=observed, mode=ConstraintMode.EQUALITY, slack=0.0), config)
        except SolverError as e:
            logging.debug("no completion of Z under the cap: residual %.3g", e.best_residual)
    if completion is None or completion.max_norm_value > cap:
        return _fit_under_cap(problem, config, cap, rank)

    m, repaired = _repair(problem, completion.estimate, completion.max_norm_value)
    certificate = min(repaired, max_norm_bound(m, problem.rank_param).upper)
    residual = max(constraint_residual(problem, m), _box_excess(problem, m))
    return completion._replace(estimate=m, max_norm_value=float(certificate),
                               constraint_residual=float(residual))


def solve_me(problem: MEProblem, config: SolverConfig = SolverConfig()) -> MESolution:
    """Finds a feasible estimate with a certified max norm of at most sqrt(d) L.

    The returned estimate satisfies the mode constraint within config.tolerance
    and the box exactly. In Equality mode its certificate exceeds the smallest
    feasible budget found by at most half the bisection tolerance. In
    InnerProduct mode it is the completion of Z (see _complete_observations).
    """
    problem.validate()
    if not np.any(problem.support):
        raise InvalidArgumentError("weights have empty support")
    S, A = problem.weights.shape
    bound = problem.entry_bound
    cap = np.sqrt(problem.rank_param) * bound
    bisect_tol = config.bisect_tol or 1e-4 * bound
    rank = config.factor_rank or min(S, A)
    low = lower_bound(problem)
    if low > bound + config.tolerance:
        raise SolverError("the constraint forces entries outside the box", low - bound)

    constant = _constant_candidate(problem)
    if constant is not None:
        certificate = float(abs(constant[0, 0]))
        logging.debug("constant estimate %.6g", constant[0, 0])
        return MESolution(constant, certificate, constraint_residual(problem, constant),
                          0, True, certificate)
    if problem.mode is ConstraintMode.INNER_PRODUCT:
        return _complete_observations(problem, config, cap, rank)

    fit = _FactoredFit(problem, config, 0.5 * bisect_tol)
    rng = np.random.default_rng(config.seed)
    spectral = tuple(_fit_columns(f, rank) for f in svd_factors(fit.filled))
    iterations = 0
    best_residual = np.inf

    def attempt(tau: float, warm: Optional[Tuple[np.ndarray, np.ndarray]]) -> Optional[_Attempt]:
        nonlocal iterations, best_residual
        starts: List[Tuple[np.ndarray, np.ndarray]] = [warm if warm is not None else spectral]
        scale = np.sqrt(tau / rank)
        for _ in range(config.restarts):
            starts.append((rng.uniform(-1, 1, size=(S, rank)) * scale,
                           rng.uniform(-1, 1, size=(A, rank)) * scale))
        for left, right in starts:
            left, right, used = fit.run(tau, left, right)
            iterations += used
            result = _certify(problem, left, right)
            best_residual = min(best_residual, result.residual)
            if result.residual <= config.tolerance \
                    and result.certificate <= tau + 0.5 * bisect_tol:
                return result
        return None

    best = attempt(cap, None)
    if best is None:
        raise SolverError(
            "no feasible estimate under the max-norm cap {:.6g}".format(cap), best_residual)
    high, budget = cap, cap
    halvings = 0
    while high - low > bisect_tol and halvings < MAX_BISECTIONS:
        halvings += 1
        mid = 0.5 * (low + high)
        found = attempt(mid, (best.left, best.right))
        logging.debug("budget %.6g: %s", mid, "feasible" if found else "infeasible")
        if found is not None:
            best, high, budget = found, mid, mid
        else:
            low = mid

    return MESolution(
            estimate=best.estimate,
            max_norm_value=float(best.certificate),
            constraint_residual=float(best.residual),
            iterations=iterations,
            converged=high - low <= bisect_tol,
            budget=float(budget))
