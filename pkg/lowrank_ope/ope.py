"""Off-policy evaluation by backward Q-iteration with max-norm matrix estimation.

At each step t (from H down to 1) the Bellman backup of the previous estimate is
known only on the support of the behavior occupancy; the matrix estimation program
fills in the rest, and the final estimate is <mu_1 pi_1, Q_hat_1>.
"""
import logging
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from lowrank_ope.common import (
        ConstraintMode, EvaluationMode, InvalidArgumentError, Policy, SlackMode, support_mask,
)
from lowrank_ope.estimation import (
        DiscrepancyConfig, empirical_operator_discrepancy, MEProblem, MESolution,
        operator_discrepancy, operator_norm, solve_me, SolverConfig, SolverError,
)
from lowrank_ope.mdp import bellman_apply, exact_q_values, LowRankMDP, occupancy_measures
from lowrank_ope.offline_data import EmpiricalModel, empirical_model, OfflineDataset


class SlackConfig(NamedTuple):
    """Inner-product slack of the finite-sample program.

    ORACLE uses |<rho_t, Z_t - Y_t>| from the true MDP; PLUGIN uses
    scale * H * sqrt(S log(HS/delta) / K).
    """
    mode: SlackMode = SlackMode.PLUGIN
    scale: float = 1.0
    delta: float = 0.05


class StepDiagnostics(NamedTuple):
    # 1-based step of the horizon.
    step: int
    support_size: int
    residual: float
    certificate: float
    cap: float
    slack: float
    iterations: int
    # ||rho_t - d_t^target||_op, when the target occupancy is known.
    discrepancy: Optional[float]


class OPERun(NamedTuple):
    mode: EvaluationMode
    q_estimates: np.ndarray
    # Y_t (infinite) or Z_t (finite) on the support of rho_t, NaN elsewhere.
    per_step_observed: np.ndarray
    estimate: float
    diagnostics: List[StepDiagnostics]


class FiniteBound(NamedTuple):
    total: float
    discrepancy_term: float
    statistical_term: float
    per_step: List[float]
    # Whether 2 < K < SA, the regime the finite-sample guarantee is stated for.
    in_stated_regime: bool


def _check_policy(policy: Policy, horizon: int, num_states: int, num_actions: int) -> None:
    policy.validate()
    if policy.per_step.shape != (horizon, num_states, num_actions):
        raise InvalidArgumentError("policy shape {} does not match ({}, {}, {})".format(
            policy.per_step.shape, horizon, num_states, num_actions))


def _solve_step(problem: MEProblem, config: SolverConfig, t: int) -> MESolution:
    try:
        return solve_me(problem, config)
    except SolverError as e:
        raise SolverError("step {}: {}".format(t + 1, e), e.best_residual, t + 1) from e


def plugin_slack(horizon: int, num_states: int, num_trajectories: int,
                 scale: float = 1.0, delta: float = 0.05) -> float:
    """scale * H * sqrt(S log(HS/delta) / K)."""
    return scale * horizon * np.sqrt(
        num_states * np.log(horizon * num_states / delta) / num_trajectories)


def _estimate(mu1: np.ndarray, target: Policy, q_first: np.ndarray) -> float:
    return float(np.sum(mu1[:, None] * target.per_step[0] * q_first))


def evaluate_policy_infinite(mdp: LowRankMDP, behavior: Policy, target: Policy,
                             me_config: SolverConfig = SolverConfig()) -> OPERun:
    """Evaluates target with rho_t = d_t^behavior and the true kernel on its support."""
    S, A, H = mdp.num_states, mdp.num_actions, mdp.horizon
    _check_policy(behavior, H, S, A)
    _check_policy(target, H, S, A)
    behavior_occupancy = occupancy_measures(mdp, behavior)
    target_occupancy = occupancy_measures(mdp, target)
    logging.info("infinite-sample evaluation: S=%d A=%d H=%d d=%d", S, A, H, mdp.rank_param)

    q_estimates = np.zeros((H, S, A))
    observed_all = np.full((H, S, A), np.nan)
    diagnostics: List[StepDiagnostics] = []
    continuation = np.zeros((S, A))
    for t in reversed(range(H)):
        rho = behavior_occupancy.state_action[t]
        support = support_mask(rho)
        if not np.any(support):
            raise InvalidArgumentError("behavior occupancy at step {} is empty".format(t + 1))
        next_policy = target.per_step[t + 1] if t + 1 < H else None
        observed = bellman_apply(mdp.transitions[t], mdp.rewards[t], next_policy,
                                 continuation, support)
        problem = MEProblem(rho, observed, float(H - t), mdp.rank_param, ConstraintMode.EQUALITY)
        solution = _solve_step(problem, me_config, t)

        q_estimates[t] = solution.estimate
        observed_all[t] = observed
        continuation = solution.estimate
        diagnostics.append(StepDiagnostics(
                step=t + 1,
                support_size=int(support.sum()),
                residual=solution.constraint_residual,
                certificate=solution.max_norm_value,
                cap=float(np.sqrt(mdp.rank_param) * (H - t)),
                slack=0.0,
                iterations=solution.iterations,
                discrepancy=operator_norm(rho - target_occupancy.state_action[t])))

    diagnostics.reverse()
    estimate = _estimate(mdp.initial_dist, target, q_estimates[0])
    logging.info("infinite-sample estimate %.8g", estimate)
    return OPERun(EvaluationMode.INFINITE_SAMPLE, q_estimates, observed_all, estimate, diagnostics)


def evaluate_policy_finite(dataset: OfflineDataset, target: Policy, mu1: np.ndarray,
                           me_config: SolverConfig = SolverConfig(),
                           slack_config: SlackConfig = SlackConfig(),
                           mdp: Optional[LowRankMDP] = None,
                           rank_param: Optional[int] = None) -> OPERun:
    """Evaluates target with rho_t = d_hat_t^behavior and the empirical Bellman backup.

    mdp is the oracle for ORACLE slack and for the per-step discrepancy diagnostic;
    without it rank_param must be given.
    """
    S, A, H = dataset.num_states, dataset.num_actions, dataset.horizon
    K = dataset.num_trajectories
    _check_policy(target, H, S, A)
    if mdp is not None:
        rank_param = mdp.rank_param
    if rank_param is None:
        raise InvalidArgumentError("rank parameter required when no MDP is supplied")
    if slack_config.mode is SlackMode.ORACLE and mdp is None:
        raise InvalidArgumentError("oracle slack requires the true MDP")
    if mu1.shape != (S,) or abs(float(mu1.sum()) - 1) > 1e-9:
        raise InvalidArgumentError("initial distribution must be a distribution over S")
    model = empirical_model(dataset)
    target_occupancy = occupancy_measures(mdp, target) if mdp is not None else None
    logging.info("finite-sample evaluation: S=%d A=%d H=%d K=%d slack=%s",
                 S, A, H, K, slack_config.mode.value)

    q_estimates = np.zeros((H, S, A))
    observed_all = np.full((H, S, A), np.nan)
    diagnostics: List[StepDiagnostics] = []
    continuation = np.zeros((S, A))
    for t in reversed(range(H)):
        rho = model.empirical_occupancy[t]
        support = model.support(t)
        last = t + 1 == H
        next_policy = None if last else target.per_step[t + 1]
        observed = bellman_apply(None if last else model.kernel(t), model.observed_rewards[t],
                                 next_policy, continuation, support)
        if slack_config.mode is SlackMode.ORACLE:
            assert mdp is not None
            slack = _inner_product_gap(mdp, t, next_policy, continuation, rho, observed)
        else:
            slack = plugin_slack(H, S, K, slack_config.scale, slack_config.delta)
        problem = MEProblem(rho, observed, float(H - t), rank_param,
                            ConstraintMode.INNER_PRODUCT, slack)
        solution = _solve_step(problem, me_config, t)

        q_estimates[t] = solution.estimate
        observed_all[t] = observed
        continuation = solution.estimate
        diagnostics.append(StepDiagnostics(
                step=t + 1,
                support_size=int(support.sum()),
                residual=solution.constraint_residual,
                certificate=solution.max_norm_value,
                cap=float(np.sqrt(rank_param) * (H - t)),
                slack=float(slack),
                iterations=solution.iterations,
                discrepancy=None if target_occupancy is None
                else operator_norm(rho - target_occupancy.state_action[t])))

    diagnostics.reverse()
    estimate = _estimate(mu1, target, q_estimates[0])
    logging.info("finite-sample estimate %.8g", estimate)
    return OPERun(EvaluationMode.FINITE_SAMPLE, q_estimates, observed_all, estimate, diagnostics)


def _inner_product_gap(mdp: LowRankMDP, t: int, next_policy: Optional[np.ndarray],
                       continuation: np.ndarray, rho: np.ndarray, observed: np.ndarray) -> float:
    """|<rho_t, Z_t - Y_t>| with Y_t the true backup of the same continuation."""
    support = support_mask(rho)
    truth = bellman_apply(mdp.transitions[t], mdp.rewards[t], next_policy, continuation, support)
    return abs(float(np.sum(rho[support] * (observed[support] - truth[support]))))


def empirical_error_term(mdp: LowRankMDP, model: EmpiricalModel, target: Policy, t: int,
                         continuation: np.ndarray) -> float:
    """|<d_hat_t, Z_t - Y_t>| at zero-based step t for a given continuation Q_{t+1}."""
    H = mdp.horizon
    last = t + 1 == H
    next_policy = None if last else target.per_step[t + 1]
    rho = model.empirical_occupancy[t]
    observed = bellman_apply(None if last else model.kernel(t), model.observed_rewards[t],
                             next_policy, continuation, support_mask(rho))
    return _inner_product_gap(mdp, t, next_policy, continuation, rho, observed)


def _bound_scale(mdp: LowRankMDP) -> float:
    return 2 * mdp.horizon * np.sqrt(mdp.rank_param * mdp.num_states * mdp.num_actions)


def bound_infinite(mdp: LowRankMDP, behavior: Policy, target: Policy,
                   config: DiscrepancyConfig = DiscrepancyConfig()) -> Tuple[float, List[float]]:
    """2H sqrt(dSA) sum_t Dis(d_t^behavior, d_t^target), with the per-step Dis values."""
    behavior_occupancy = occupancy_measures(mdp, behavior)
    target_occupancy = occupancy_measures(mdp, target)
    per_step = [operator_discrepancy(behavior_occupancy.state_action[t],
                                     target_occupancy.state_action[t], config).value
                for t in range(mdp.horizon)]
    return _bound_scale(mdp) * float(sum(per_step)), per_step


def statistical_term(horizon: int, num_states: int, num_actions: int, rank_param: int,
                     num_trajectories: int, delta: float, constant: float,
                     num_policies: int = 1) -> float:
    """C H^2 sqrt(d(S+A) log(|Pi| H S / delta) / K)."""
    log_term = np.log(num_policies * horizon * num_states / delta)
    return constant * horizon ** 2 * np.sqrt(
        rank_param * (num_states + num_actions) * log_term / num_trajectories)


def bound_finite(mdp: LowRankMDP, behavior: Policy, target: Policy, num_trajectories: int,
                 delta: float = 0.05, constant: float = 1.0,
                 warn_regime: bool = True) -> FiniteBound:
    """2H sqrt(dSA) sum_t ||d_t^beta - d_t^theta||_op + C H^2 sqrt(d(S+A) log(HS/delta) / K).

    Both occupancies are exact, so behavior = target leaves only the second term.
    """
    if num_trajectories < 1:
        raise InvalidArgumentError("need at least one trajectory")
    S, A, H = mdp.num_states, mdp.num_actions, mdp.horizon
    in_regime = 2 < num_trajectories < S * A
    if not in_regime and warn_regime:
        logging.warning("K=%d outside 2 < K < SA=%d; bound evaluated outside its stated regime",
                        num_trajectories, S * A)
    behavior_occupancy = occupancy_measures(mdp, behavior).state_action
    target_occupancy = occupancy_measures(mdp, target).state_action
    per_step = [empirical_operator_discrepancy(behavior_occupancy[t], target_occupancy[t])
                for t in range(H)]
    discrepancy_term = _bound_scale(mdp) * float(sum(per_step))
    stat = statistical_term(H, S, A, mdp.rank_param, num_trajectories, delta, constant)
    return FiniteBound(discrepancy_term + stat, discrepancy_term, stat, per_step, in_regime)


def error_decomposition(mdp: LowRankMDP, target: Policy, run: OPERun) -> Tuple[float, float]:
    """Returns (sum_t <d_t, Q_hat_t - B_t Q_hat_{t+1}>, <d_1, Q_hat_1 - Q_1>) under target.

    Both sides use the true kernel on every entry.
    """
    H = mdp.horizon
    occupancy = occupancy_measures(mdp, target).state_action
    telescoped = 0.0
    for t in range(H):
        next_policy = target.per_step[t + 1] if t + 1 < H else None
        continuation = run.q_estimates[t + 1] if t + 1 < H else np.zeros_like(run.q_estimates[0])
        backup = bellman_apply(mdp.transitions[t], mdp.rewards[t], next_policy, continuation)
        telescoped += float(np.sum(occupancy[t] * (run.q_estimates[t] - backup)))
    direct = float(np.sum(occupancy[0] * (run.q_estimates[0] - exact_q_values(mdp, target)[0])))
    return telescoped, direct
