#!/usr/bin/env python3
import numpy as np

from lowrank_ope.common import (
        EvaluationMode, FactorizationForm, InvalidArgumentError, Policy, SlackMode,
)
from lowrank_ope.estimation import SolverConfig
from lowrank_ope.mdp import exact_q_values, exact_return, random_low_rank_mdp
from lowrank_ope.offline_data import empirical_model, sample_trajectories
from lowrank_ope.ope import (
        bound_finite, bound_infinite, empirical_error_term, error_decomposition,
        evaluate_policy_finite, evaluate_policy_infinite, OPERun, SlackConfig, statistical_term,
)

FAST = SolverConfig(max_iters=400, bisect_tol=1e-2)
ORACLE = SlackConfig(mode=SlackMode.ORACLE)


def test_full_support_is_exact() -> None:
    for seed in range(3):
        mdp = random_low_rank_mdp(4, 4, 3, 2, seed=seed, form=FactorizationForm.FORM_I)
        behavior = Policy.uniform(4, 4, 3)
        target = Policy.random_support(4, 4, 3, 2, np.random.default_rng(seed))
        run = evaluate_policy_infinite(mdp, behavior, target, FAST)
        assert abs(run.estimate - exact_return(mdp, target)) <= 1e-6
        assert np.allclose(run.q_estimates, exact_q_values(mdp, target), atol=1e-6)
        total, per_step = bound_infinite(mdp, behavior, target)
        assert total == 0 and per_step == [0.0] * 3


def test_run_invariants() -> None:
    mdp = random_low_rank_mdp(5, 4, 3, 4, seed=12, form=FactorizationForm.FORM_II)
    rng = np.random.default_rng(1)
    behavior = Policy.random_support(5, 4, 3, 2, rng)
    target = Policy.random_support(5, 4, 3, 2, rng)
    run = evaluate_policy_infinite(mdp, behavior, target, FAST)
    assert run.mode is EvaluationMode.INFINITE_SAMPLE
    for t in range(3):
        assert np.max(np.abs(run.q_estimates[t])) <= 3 - t + 1e-9
    direct = np.sum(mdp.initial_dist[:, None] * target.per_step[0] * run.q_estimates[0])
    assert abs(run.estimate - direct) <= 1e-12
    assert abs(run.estimate) <= 3
    assert [step.step for step in run.diagnostics] == [1, 2, 3]
    for step in run.diagnostics:
        assert step.residual <= FAST.tolerance
        assert step.certificate <= step.cap + FAST.bisect_tol

    telescoped, direct_error = error_decomposition(mdp, target, run)
    assert abs(telescoped - direct_error) <= 1e-8
    assert abs(direct_error - (run.estimate - exact_return(mdp, target))) <= 1e-10


def test_error_decomposition_for_any_estimate() -> None:
    mdp = random_low_rank_mdp(4, 3, 3, 2, seed=9, form=FactorizationForm.FORM_II)
    target = Policy.random_support(4, 3, 3, 2, np.random.default_rng(9))
    rng = np.random.default_rng(10)
    q_estimates = rng.uniform(-3, 3, size=(3, 4, 3))
    run = OPERun(EvaluationMode.FINITE_SAMPLE, q_estimates, np.full((3, 4, 3), np.nan),
                 float(np.sum(mdp.initial_dist[:, None] * target.per_step[0] * q_estimates[0])),
                 [])
    telescoped, direct = error_decomposition(mdp, target, run)
    assert abs(telescoped - direct) <= 1e-8
    assert abs(direct - (run.estimate - exact_return(mdp, target))) <= 1e-10


def test_infinite_bound_holds() -> None:
    for seed in range(4):
        mdp = random_low_rank_mdp(4, 4, 2, 2, seed=100 + seed, form=FactorizationForm.FORM_I)
        rng = np.random.default_rng(seed)
        behavior = Policy.random_support(4, 4, 2, 2, rng)
        target = Policy.random_support(4, 4, 2, 2, rng)
        run = evaluate_policy_infinite(mdp, behavior, target, FAST)
        bound, per_step = bound_infinite(mdp, behavior, target)
        error = abs(run.estimate - exact_return(mdp, target))
        assert error <= bound + 10 * FAST.tolerance * 2, (error, bound)
        assert abs(bound - 2 * 2 * np.sqrt(2 * 16) * sum(per_step)) <= 1e-12


def test_bandit_bound_holds() -> None:
    mdp = random_low_rank_mdp(4, 4, 1, 2, seed=31, form=FactorizationForm.FORM_I)
    rng = np.random.default_rng(31)
    behavior = Policy.random_support(4, 4, 1, 2, rng)
    target = Policy.random_support(4, 4, 1, 2, rng)
    run = evaluate_policy_infinite(mdp, behavior, target, FAST)
    bound, per_step = bound_infinite(mdp, behavior, target)
    assert abs(bound - 2 * np.sqrt(2 * 16) * per_step[0]) <= 1e-12
    assert abs(run.estimate - exact_return(mdp, target)) <= bound + 1e-6


def test_finite_behavior_evaluation_converges() -> None:
    mdp = random_low_rank_mdp(3, 3, 2, 2, seed=4, form=FactorizationForm.FORM_I)
    behavior = Policy.random_support(3, 3, 2, 2, np.random.default_rng(4))
    dataset = sample_trajectories(mdp, behavior, 20000, seed=4)
    run = evaluate_policy_finite(dataset, behavior, mdp.initial_dist, FAST, ORACLE, mdp=mdp)
    assert run.mode is EvaluationMode.FINITE_SAMPLE
    assert abs(run.estimate - exact_return(mdp, behavior)) <= 0.05


def test_finite_estimate_follows_target() -> None:
    mdp = random_low_rank_mdp(3, 3, 2, 2, seed=4, form=FactorizationForm.FORM_I)
    dataset = sample_trajectories(mdp, Policy.uniform(3, 3, 2), 20000, seed=5)
    estimates = []
    for action in range(3):
        target = Policy.deterministic([[action] * 3, [action] * 3], num_actions=3)
        run = evaluate_policy_finite(dataset, target, mdp.initial_dist, FAST, ORACLE, mdp=mdp)
        assert abs(run.estimate - exact_return(mdp, target)) <= 0.05
        estimates.append(run.estimate)
    assert len(set(estimates)) == 3


def test_single_trajectory() -> None:
    mdp = random_low_rank_mdp(4, 3, 3, 2, seed=8, form=FactorizationForm.FORM_I)
    behavior = Policy.uniform(4, 3, 3)
    target = Policy.random_support(4, 3, 3, 1, np.random.default_rng(8))
    dataset = sample_trajectories(mdp, behavior, 1, seed=8)
    run = evaluate_policy_finite(dataset, target, mdp.initial_dist, FAST, rank_param=2)
    assert np.isfinite(run.estimate) and abs(run.estimate) <= 3
    for step in run.diagnostics:
        assert step.support_size == 1 and step.residual <= FAST.tolerance
        assert step.discrepancy is None


def test_oracle_slack_needs_mdp() -> None:
    mdp = random_low_rank_mdp(3, 3, 2, 2, seed=2, form=FactorizationForm.FORM_I)
    policy = Policy.uniform(3, 3, 2)
    dataset = sample_trajectories(mdp, policy, 10, seed=2)
    try:
        evaluate_policy_finite(dataset, policy, mdp.initial_dist, FAST, ORACLE, rank_param=2)
    except InvalidArgumentError:
        pass
    else:
        assert False, "oracle slack without the MDP must be rejected"


def test_empirical_error_term() -> None:
    mdp = random_low_rank_mdp(3, 3, 3, 2, seed=6, form=FactorizationForm.FORM_I)
    policy = Policy.uniform(3, 3, 3)
    model = empirical_model(sample_trajectories(mdp, policy, 5000, seed=6))
    q_values = exact_q_values(mdp, policy)
    # Rewards are observed exactly, so the last step has no error.
    assert empirical_error_term(mdp, model, policy, 2, np.zeros((3, 3))) == 0
    for t in range(2):
        term = empirical_error_term(mdp, model, policy, t, q_values[t + 1])
        assert 0 <= term <= 3 * np.sqrt(3 * np.log(3 * 3 / 0.05) / 5000)


def test_finite_bound_formula() -> None:
    mdp = random_low_rank_mdp(4, 4, 2, 2, seed=3, form=FactorizationForm.FORM_I)
    behavior = Policy.uniform(4, 4, 2)
    target = Policy.random_support(4, 4, 2, 1, np.random.default_rng(3))
    small = bound_finite(mdp, behavior, target, 10, constant=2.0)
    large = bound_finite(mdp, behavior, target, 20, constant=2.0)
    assert small.in_stated_regime and not bound_finite(mdp, behavior, target, 1).in_stated_regime
    assert abs(large.statistical_term / small.statistical_term - 1 / np.sqrt(2)) <= 1e-12
    assert abs(small.discrepancy_term - large.discrepancy_term) <= 1e-15
    assert abs(small.total - small.discrepancy_term - small.statistical_term) <= 1e-12
    same = bound_finite(mdp, behavior, behavior, 10, constant=2.0)
    assert same.discrepancy_term == 0
    assert same.total == statistical_term(2, 4, 4, 2, 10, 0.05, 2.0)


if __name__ == '__main__':
    for name, test in list(globals().items()):
        if name.startswith("test_"):
            test()
    print("ope tests passed")
