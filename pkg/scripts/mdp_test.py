#!/usr/bin/env python3
import numpy as np

from lowrank_ope.common import (
        FactorizationForm, InvalidArgumentError, OffSupportError, Policy,
)
from lowrank_ope.mdp import (
        bellman_apply, exact_q_values, exact_return, LowRankMDP, monte_carlo_q_value,
        occupancy_measures, random_low_rank_mdp, reconstruct_kernel,
)


def test_uniform_kernel() -> None:
    mdp = random_low_rank_mdp(3, 3, 2, 2, seed=7, form=FactorizationForm.UNIFORM)
    assert np.allclose(mdp.transitions, 1.0 / 3, atol=1e-15)


def test_factors_reconstruct_kernel() -> None:
    for form in FactorizationForm:
        mdp = random_low_rank_mdp(5, 4, 3, 4, seed=1, form=form)
        rebuilt = reconstruct_kernel(form, mdp.factors)
        assert np.max(np.abs(rebuilt - mdp.transitions)) <= 1e-9, form
        assert np.max(np.abs(mdp.transitions.sum(axis=3) - 1)) <= 1e-9, form


def test_reward_rank() -> None:
    mdp = random_low_rank_mdp(6, 5, 2, 4, seed=3, form=FactorizationForm.FORM_II)
    for t in range(mdp.horizon):
        sigma = np.linalg.svd(mdp.rewards[t], compute_uv=False)
        assert np.all(sigma[2:] < 1e-8 * sigma[0])
        assert 0 <= mdp.rewards[t].min() and mdp.rewards[t].max() <= 1


def test_rank_limits() -> None:
    for d in (1, 9):
        try:
            random_low_rank_mdp(4, 4, 2, d, seed=0, form=FactorizationForm.FORM_I)
        except InvalidArgumentError:
            pass
        else:
            assert False, "rank parameter {} should be rejected".format(d)


def test_json_round_trip() -> None:
    mdp = random_low_rank_mdp(4, 3, 2, 2, seed=11, form=FactorizationForm.FORM_I)
    loaded = LowRankMDP.from_json_dict(mdp.to_json_dict())
    assert np.array_equal(loaded.transitions, mdp.transitions)
    assert np.array_equal(loaded.rewards, mdp.rewards)
    assert np.array_equal(loaded.initial_dist, mdp.initial_dist)
    assert loaded.form is mdp.form


def test_occupancy_measures() -> None:
    mdp = random_low_rank_mdp(5, 3, 4, 2, seed=2, form=FactorizationForm.FORM_I)
    policy = Policy.random_support(5, 3, 4, 2, np.random.default_rng(0))
    occupancy = occupancy_measures(mdp, policy)
    assert np.allclose(occupancy.state_action.sum(axis=(1, 2)), 1, atol=1e-9)
    assert np.allclose(occupancy.state_action.sum(axis=2), occupancy.state_only, atol=1e-9)
    assert np.allclose(occupancy.state_only[0], mdp.initial_dist)


def test_q_values_bounded_and_returns_agree() -> None:
    mdp = random_low_rank_mdp(4, 4, 3, 4, seed=5, form=FactorizationForm.FULLY_FACTORIZED)
    policy = Policy.uniform(4, 4, 3)
    q_values = exact_q_values(mdp, policy)
    for t in range(3):
        assert np.all(q_values[t] <= 3 - t + 1e-12) and np.all(q_values[t] >= 0)
    # exact_return raises if its two formulas disagree.
    value = exact_return(mdp, policy)
    assert 0 <= value <= 3


def test_deterministic_policy() -> None:
    policy = Policy.deterministic([[0, 1], [1, 1]], num_actions=3)
    policy.validate()
    assert policy.per_step[0, 1, 1] == 1.0 and policy.per_step[1, 0, 1] == 1.0
    assert policy.per_step.sum() == 4


def test_monte_carlo_agrees_with_dp() -> None:
    mdp = random_low_rank_mdp(3, 2, 3, 2, seed=9, form=FactorizationForm.FORM_I)
    policy = Policy.uniform(3, 2, 3)
    q_values = exact_q_values(mdp, policy)
    for state, action in ((0, 0), (2, 1)):
        mean, stderr = monte_carlo_q_value(mdp, policy, 0, state, action, 20000, seed=4)
        assert abs(mean - q_values[0, state, action]) <= 4 * stderr + 1e-12


def test_bellman_apply_off_support() -> None:
    kernel = np.full((2, 2, 2), 0.5)
    kernel[1, 1] = np.nan
    reward = np.ones((2, 2))
    policy = np.full((2, 2), 0.5)
    f = np.ones((2, 2))
    support = np.array([[True, True], [True, False]])
    out = bellman_apply(kernel, reward, policy, f, support)
    assert np.allclose(out[support], 2.0) and np.isnan(out[1, 1])
    try:
        bellman_apply(kernel, reward, policy, f)
    except OffSupportError:
        pass
    else:
        assert False, "undefined kernel row must not be read"
    # The last step has no continuation.
    assert np.array_equal(bellman_apply(None, reward, None, f), reward)


def chain_mdp(horizon: int) -> LowRankMDP:
    """Two states that swap deterministically under a single action; every reward is 1."""
    flip = np.array([[0.0, 1.0], [1.0, 0.0]])
    factors = (np.tile(flip, (horizon, 1, 1, 1)), np.ones((horizon, 1, 1)))
    mdp = LowRankMDP(
            num_states=2, num_actions=1, horizon=horizon, rank_param=2,
            form=FactorizationForm.FORM_I, factors=factors, rewards=np.ones((horizon, 2, 1)),
            transitions=reconstruct_kernel(FactorizationForm.FORM_I, factors),
            initial_dist=np.array([1.0, 0.0]))
    mdp.validate()
    return mdp


def test_uniform_kernel_spreads_states() -> None:
    mdp = random_low_rank_mdp(4, 3, 4, 2, seed=8, form=FactorizationForm.UNIFORM)
    policy = Policy.random_support(4, 3, 4, 1, np.random.default_rng(8))
    occupancy = occupancy_measures(mdp, policy)
    assert np.allclose(occupancy.state_only[1:], 0.25, atol=1e-15)


def test_single_step_occupancy() -> None:
    mdp = random_low_rank_mdp(5, 3, 1, 2, seed=14, form=FactorizationForm.FORM_II)
    policy = Policy.random_support(5, 3, 1, 2, np.random.default_rng(14))
    occupancy = occupancy_measures(mdp, policy)
    assert np.array_equal(occupancy.state_action[0],
                          mdp.initial_dist[:, None] * policy.per_step[0])


def test_deterministic_chain() -> None:
    mdp = chain_mdp(3)
    occupancy = occupancy_measures(mdp, Policy.uniform(2, 1, 3))
    assert np.array_equal(occupancy.state_action[1], [[0.0], [1.0]])
    assert np.array_equal(occupancy.state_action[2], [[1.0], [0.0]])


def test_unit_rewards_count_remaining_steps() -> None:
    q_values = exact_q_values(chain_mdp(4), Policy.uniform(2, 1, 4))
    for t in range(4):
        assert np.array_equal(q_values[t], np.full((2, 1), 4.0 - t))


def test_last_step_q_is_reward() -> None:
    mdp = random_low_rank_mdp(4, 3, 3, 2, seed=15, form=FactorizationForm.FORM_I)
    q_values = exact_q_values(mdp, Policy.random_support(4, 3, 3, 2, np.random.default_rng(1)))
    assert np.array_equal(q_values[-1], mdp.rewards[-1])


def test_bellman_apply_matches_loops() -> None:
    rng = np.random.default_rng(13)
    S, A = 3, 2
    kernel = rng.dirichlet(np.ones(S), size=(S, A))
    reward = rng.uniform(size=(S, A))
    policy = rng.dirichlet(np.ones(A), size=S)
    f = rng.uniform(-1, 1, size=(S, A))
    expected = np.zeros((S, A))
    for s in range(S):
        for a in range(A):
            expected[s, a] = reward[s, a]
            for x in range(S):
                for b in range(A):
                    expected[s, a] += kernel[s, a, x] * policy[x, b] * f[x, b]
    assert np.max(np.abs(bellman_apply(kernel, reward, policy, f) - expected)) <= 1e-12


def test_fully_factorized_kernel() -> None:
    mdp = random_low_rank_mdp(6, 6, 2, 2, seed=3, form=FactorizationForm.FULLY_FACTORIZED)
    for t in range(2):
        for x in range(6):
            sigma = np.linalg.svd(mdp.transitions[t, :, :, x], compute_uv=False)
            assert sigma[1] < 1e-8 * sigma[0]

    richer = random_low_rank_mdp(6, 6, 2, 6, seed=3, form=FactorizationForm.FULLY_FACTORIZED)
    kernel = richer.transitions
    assert np.max(np.abs(kernel - kernel[:, :, :1])) > 1e-3, "kernel ignores the action"
    assert np.max(np.abs(kernel - kernel[:, :1])) > 1e-3, "kernel ignores the state"
    for t in range(2):
        for x in range(6):
            sigma = np.linalg.svd(kernel[t, :, :, x], compute_uv=False)
            assert np.all(sigma[3:] < 1e-8 * sigma[0])


def test_occupancy_q_duality() -> None:
    forms = list(FactorizationForm)
    for seed in range(50):
        S, A, H = 2 + seed % 4, 2 + seed % 3, 1 + seed % 4
        mdp = random_low_rank_mdp(S, A, H, 2, seed=seed, form=forms[seed % len(forms)])
        policy = Policy.random_support(S, A, H, 1 + seed % A, np.random.default_rng(seed))
        occupancy = occupancy_measures(mdp, policy).state_action
        q_values = exact_q_values(mdp, policy)
        for t in range(H):
            tail = float(np.sum(occupancy[t:] * mdp.rewards[t:]))
            assert abs(float(np.sum(occupancy[t] * q_values[t])) - tail) <= 1e-10, (seed, t)


def test_q_value_rank() -> None:
    for form in FactorizationForm:
        for d in (2, 4):
            mdp = random_low_rank_mdp(6, 6, 3, d, seed=d, form=form)
            q_values = exact_q_values(mdp, Policy.uniform(6, 6, 3))
            for t in range(3):
                sigma = np.linalg.svd(q_values[t], compute_uv=False)
                assert np.all(sigma[d:] < 1e-8 * sigma[0]), (form, d, t)



if __name__ == '__main__':
    for name, test in list(globals().items()):
        if name.startswith("test_"):
            test()
    print("mdp tests passed")
