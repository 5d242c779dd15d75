#!/usr/bin/env python3
import numpy as np

from lowrank_ope.common import FactorizationForm, Policy
from lowrank_ope.estimation import operator_norm, SolverConfig
from lowrank_ope.mdp import exact_return, occupancy_measures, random_low_rank_mdp
from lowrank_ope.offline_data import sample_trajectories
from lowrank_ope.ope import statistical_term
from lowrank_ope.policy_opt import (
        build_candidate_set, CandidateSet, lemma_discrepancy_bound, optimize_policy,
        scaled_budgets, suboptimality_bound,
)

FAST = SolverConfig(max_iters=400, bisect_tol=1e-2)
MDP = random_low_rank_mdp(3, 3, 2, 2, seed=17, form=FactorizationForm.FORM_I)
BEHAVIOR = Policy.random_support(3, 3, 2, 2, np.random.default_rng(17))


def test_scaled_budgets() -> None:
    # sqrt(d S^2 A) = 6 for d=2, S=3, A=2.
    out = scaled_budgets(np.array([1.0, 2.0, 0.0]), 2, 3, 2)
    assert np.allclose(out, [1 / 36, 2 / 6, 0.0], rtol=1e-12)


def test_zero_budget_keeps_behavior_only() -> None:
    candidates = build_candidate_set(BEHAVIOR, [0.0, 0.0], 2, n_candidates=5, seed=0)
    assert len(candidates.policies) == 1 and candidates.behavior_included
    assert np.array_equal(candidates.policies[0].per_step, BEHAVIOR.per_step)


def test_large_budget_fills_the_set() -> None:
    candidates = build_candidate_set(BEHAVIOR, [1e6, 1e6], 2, n_candidates=6, seed=1)
    assert len(candidates.policies) == 6
    assert np.all(candidates.constraint_slack >= -1e-9)
    for policy in candidates.policies:
        policy.validate()
        for t in range(2):
            gap = operator_norm(policy.per_step[t] - BEHAVIOR.per_step[t])
            assert gap <= candidates.scaled_budgets[t] + 1e-9


def test_candidates_are_seeded() -> None:
    a = build_candidate_set(BEHAVIOR, [0.5, 0.5], 2, n_candidates=4, seed=3)
    b = build_candidate_set(BEHAVIOR, [0.5, 0.5], 2, n_candidates=4, seed=3)
    assert len(a.policies) == len(b.policies)
    for x, y in zip(a.policies, b.policies):
        assert np.array_equal(x.per_step, y.per_step)


def test_occupancy_drift_bound() -> None:
    budgets = [0.3, 0.2]
    candidates = build_candidate_set(BEHAVIOR, budgets, 2, n_candidates=5, seed=4)
    behavior_occupancy = occupancy_measures(MDP, BEHAVIOR).state_action
    for policy in candidates.policies:
        lemma = lemma_discrepancy_bound(policy, BEHAVIOR, 2)
        occupancy = occupancy_measures(MDP, policy).state_action
        for t in range(2):
            drift = operator_norm(occupancy[t] - behavior_occupancy[t])
            assert drift <= lemma[t] + 1e-8
            assert lemma[t] <= sum(budgets[:t + 1]) + 1e-8
            assert drift <= budgets[t] + 1e-8, (t, drift)


def test_behavior_only_selects_index_zero() -> None:
    dataset = sample_trajectories(MDP, BEHAVIOR, 200, seed=5)
    candidates = build_candidate_set(BEHAVIOR, [0.0, 0.0], 2, n_candidates=3, seed=5)
    result = optimize_policy(dataset, candidates, MDP.initial_dist, FAST)
    assert result.best_index == 0 and len(result.estimates) == 1


def test_selection_and_regret() -> None:
    K = 2000
    dataset = sample_trajectories(MDP, BEHAVIOR, K, seed=6)
    candidates = build_candidate_set(BEHAVIOR, [0.05, 0.05], 2, n_candidates=4, seed=6)
    result = optimize_policy(dataset, candidates, MDP.initial_dist, FAST, workers=2)
    valid = [e for e in result.estimates if e is not None]
    assert result.estimates[result.best_index] == max(valid)
    assert result.best is candidates.policies[result.best_index]

    returns = [exact_return(MDP, policy) for policy in candidates.policies]
    regret = max(returns) - returns[result.best_index]
    assert regret <= suboptimality_bound(candidates, K)


def test_dominant_candidate_is_selected() -> None:
    bandit = random_low_rank_mdp(4, 4, 1, 2, seed=23, form=FactorizationForm.FORM_I)
    rewards = bandit.rewards[0]
    behavior = Policy.uniform(4, 4, 1)
    worst = Policy.deterministic([np.argmin(rewards, axis=1)], num_actions=4)
    best = Policy.deterministic([np.argmax(rewards, axis=1)], num_actions=4)
    candidates = CandidateSet(
            policies=[behavior, worst, best], budgets=np.ones(1), scaled_budgets=np.ones(1),
            rank_param=2, behavior_included=True, constraint_slack=np.zeros((3, 1)))
    assert exact_return(bandit, best) > exact_return(bandit, behavior) \
        > exact_return(bandit, worst)
    wins = 0
    for seed in range(20):
        dataset = sample_trajectories(bandit, behavior, 100000, seed=seed)
        result = optimize_policy(dataset, candidates, bandit.initial_dist, FAST)
        wins += result.best_index == 2
    assert wins >= 18


def test_suboptimality_bound_terms() -> None:
    zero = build_candidate_set(BEHAVIOR, [0.0, 0.0], 2, n_candidates=1, seed=0)
    assert suboptimality_bound(zero, 100, constant=2.0) \
        == statistical_term(2, 3, 3, 2, 100, 0.05, 2.0)

    wide = build_candidate_set(BEHAVIOR, [0.1, 0.1], 2, n_candidates=5, seed=7)
    shift = 4 * 2 * np.sqrt(2 * 9) * 0.2
    expected = shift + statistical_term(2, 3, 3, 2, 100, 0.05, 1.0,
                                        num_policies=len(wide.policies))
    assert abs(suboptimality_bound(wide, 100) - expected) <= 1e-12


if __name__ == '__main__':
    for name, test in list(globals().items()):
        if name.startswith("test_"):
            test()
    print("policy optimization tests passed")
