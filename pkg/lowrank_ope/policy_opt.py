"""Constrained off-policy improvement over a finite set of near-behavior policies."""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, NamedTuple, Optional, Sequence

import numpy as np

from lowrank_ope.common import InvalidArgumentError, OffSupportError, Policy
from lowrank_ope.estimation import operator_norm, SolverConfig, SolverError
from lowrank_ope.mdp import LowRankMDP
from lowrank_ope.offline_data import OfflineDataset
from lowrank_ope.ope import evaluate_policy_finite, SlackConfig, statistical_term

# Per-step budgets below this pin the step to the behavior policy.
MIN_BUDGET = 1e-14
# Slack on the operator-norm budget when accepting a candidate.
BUDGET_TOLERANCE = 1e-9
# Proposals per requested candidate before giving up.
PROPOSALS_PER_CANDIDATE = 100
# Log-scale spread of the perturbation size around its median.
PERTURBATION_SPREAD = 0.5


class OptimizationError(Exception):
    """Indicates no candidate policy could be evaluated."""


class CandidateSet(NamedTuple):
    policies: List[Policy]
    # B_t as supplied, one per step.
    budgets: np.ndarray
    # B_t (sqrt(d S^2 A))^(t-H), the per-step operator-norm budgets actually enforced.
    scaled_budgets: np.ndarray
    rank_param: int
    behavior_included: bool
    # scaled_budgets[t] - ||pi_t - pi_t^behavior||_op per candidate and step.
    constraint_slack: np.ndarray


class OptimizationResult(NamedTuple):
    best: Policy
    best_index: int
    # None marks a candidate excluded after a failed evaluation.
    estimates: List[Optional[float]]


def scaled_budgets(budgets: np.ndarray, rank_param: int, num_states: int,
                   num_actions: int) -> np.ndarray:
    """B_t (sqrt(d S^2 A))^(t-H) for 1-based t, computed in log space."""
    horizon = len(budgets)
    log_base = 0.5 * np.log(rank_param * num_states ** 2 * num_actions)
    steps = np.arange(1, horizon + 1)
    out = np.zeros(horizon)
    positive = budgets > 0
    out[positive] = np.exp(np.log(budgets[positive]) + (steps[positive] - horizon) * log_base)
    return out


def _perturb(behavior: Policy, budgets: np.ndarray, rng: np.random.Generator,
             scale: float) -> Policy:
    """Moves each step toward a random Dirichlet/vertex mixture by about scale * budget."""
    H, S, A = behavior.per_step.shape
    per_step = behavior.per_step.copy()
    for t in range(H):
        if budgets[t] < MIN_BUDGET:
            continue
        direction = rng.dirichlet(np.ones(A), size=S)
        vertices = np.eye(A)[rng.integers(A, size=S)]
        weight = rng.uniform(size=(S, 1))
        direction = weight * direction + (1 - weight) * vertices
        distance = operator_norm(direction - behavior.per_step[t])
        if distance == 0:
            continue
        target = scale * budgets[t] * rng.lognormal(0.0, PERTURBATION_SPREAD)
        mix = min(1.0, target / distance)
        per_step[t] = (1 - mix) * behavior.per_step[t] + mix * direction
    return Policy(per_step)


def _budget_slack(policy: Policy, behavior: Policy, budgets: np.ndarray) -> np.ndarray:
    return np.array([budgets[t] - operator_norm(policy.per_step[t] - behavior.per_step[t])
                     for t in range(behavior.horizon)])


def build_candidate_set(behavior: Policy, budgets: Sequence[float], rank_param: int,
                        n_candidates: int, seed: int, scale: float = 0.5) -> CandidateSet:
    """Behavior plus rejection-sampled perturbations inside the per-step budgets.

    Deterministic given seed. scale sets the median perturbation as a fraction
    of the per-step budget.
    """
    behavior.validate()
    H, S, A = behavior.per_step.shape
    budget_array = np.asarray(budgets, dtype=float)
    if budget_array.shape != (H,):
        raise InvalidArgumentError("need one budget per step, got {}".format(len(budget_array)))
    if np.any(budget_array < 0):
        raise InvalidArgumentError("budgets must be nonnegative")
    if n_candidates < 1:
        raise InvalidArgumentError("need at least one candidate")
    enforced = scaled_budgets(budget_array, rank_param, S, A)
    rng = np.random.default_rng(seed)

    policies = [behavior]
    slacks = [_budget_slack(behavior, behavior, enforced)]
    proposals = 0
    if np.any(enforced >= MIN_BUDGET):
        while len(policies) < n_candidates and proposals < PROPOSALS_PER_CANDIDATE * n_candidates:
            proposals += 1
            candidate = _perturb(behavior, enforced, rng, scale)
            slack = _budget_slack(candidate, behavior, enforced)
            if np.all(slack >= -BUDGET_TOLERANCE):
                policies.append(candidate)
                slacks.append(slack)
    if n_candidates > 1 and len(policies) == 1:
        logging.warning("budget too tight: no candidate accepted after %d proposals", proposals)
    logging.info("built %d candidates from %d proposals", len(policies), proposals)
    return CandidateSet(
            policies=policies,
            budgets=budget_array,
            scaled_budgets=enforced,
            rank_param=rank_param,
            behavior_included=True,
            constraint_slack=np.array(slacks))


def optimize_policy(dataset: OfflineDataset, candidates: CandidateSet, mu1: np.ndarray,
                    me_config: SolverConfig = SolverConfig(),
                    slack_config: SlackConfig = SlackConfig(),
                    mdp: Optional[LowRankMDP] = None, workers: int = 1) -> OptimizationResult:
    """Returns the candidate with the largest estimated return; ties go to the lowest index."""
    if not candidates.policies:
        raise InvalidArgumentError("candidate set is empty")

    def evaluate(index: int) -> Optional[float]:
        try:
            run = evaluate_policy_finite(
                    dataset, candidates.policies[index], mu1, me_config, slack_config,
                    mdp=mdp, rank_param=candidates.rank_param)
        except (SolverError, OffSupportError) as e:
            logging.warning("excluding candidate %d: %s", index, e)
            return None
        return run.estimate

    indices = range(len(candidates.policies))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            estimates = list(pool.map(evaluate, indices))
    else:
        estimates = [evaluate(i) for i in indices]

    best_index = -1
    for i, estimate in enumerate(estimates):
        if estimate is not None and (best_index < 0 or estimate > estimates[best_index]):
            best_index = i
    if best_index < 0:
        raise OptimizationError("all {} candidates failed to evaluate".format(len(estimates)))
    logging.info("selected candidate %d with estimate %.8g", best_index, estimates[best_index])
    return OptimizationResult(candidates.policies[best_index], best_index, estimates)


def suboptimality_bound(candidates: CandidateSet, num_trajectories: int,
                        delta: float = 0.05, constant: float = 1.0) -> float:
    """4H sqrt(dSA) sum_t B_t + C H^2 sqrt(d(S+A) log(|Pi| H S / delta) / K)."""
    H, S, A = candidates.policies[0].per_step.shape
    d = candidates.rank_param
    shift = 4 * H * np.sqrt(d * S * A) * float(np.sum(candidates.budgets))
    return shift + statistical_term(H, S, A, d, num_trajectories, delta, constant,
                                    num_policies=len(candidates.policies))


def lemma_discrepancy_bound(policy: Policy, behavior: Policy, rank_param: int) -> List[float]:
    """sum_{i <= t} (sqrt(d S^2 A))^(t-i) ||pi_i - pi_i^behavior||_op for every step t.

    Upper-bounds ||d_t^policy - d_t^behavior||_op on any MDP satisfying the
    low-rank assumption with this rank parameter.
    """
    H, S, A = behavior.per_step.shape
    growth = np.sqrt(rank_param * S ** 2 * A)
    bounds: List[float] = []
    total = 0.0
    for t in range(H):
        total = growth * total + operator_norm(policy.per_step[t] - behavior.per_step[t])
        bounds.append(total)
    return bounds
