"""Finite-horizon tabular MDPs with low-rank transitions, and exact DP oracles.

Steps are stored zero-indexed: rewards[t], transitions[t] and policy.per_step[t]
belong to step t+1 of the horizon.
"""
import json
import logging
from typing import Any, Dict, NamedTuple, Optional, Tuple

import numpy as np

from lowrank_ope.common import (
        ConsistencyError, FactorizationForm, InvalidArgumentError, OccupancyMeasure,
        OffSupportError, Policy,
)

# Tolerance on kernel row sums and on reconstructing a kernel from its factors.
KERNEL_TOLERANCE = 1e-9
# Relative singular value below which a reward direction counts as absent.
RANK_TOLERANCE = 1e-8
# Tolerance on the initial distribution's total mass.
INITIAL_DIST_TOLERANCE = 1e-12
# The two return formulas must agree to this absolute precision.
RETURN_TOLERANCE = 1e-10


class LowRankMDP(NamedTuple):
    """A finite-horizon MDP whose kernels are stored densely next to their factors.

    transitions[t, s, a, s'] = P_t(s'|s,a). The factors are interpreted according
    to form (see reconstruct_kernel).
    """
    num_states: int
    num_actions: int
    horizon: int
    rank_param: int
    form: FactorizationForm
    factors: Tuple[np.ndarray, ...]
    rewards: np.ndarray
    transitions: np.ndarray
    initial_dist: np.ndarray

    def validate(self) -> None:
        S, A, H = self.num_states, self.num_actions, self.horizon
        if self.rewards.shape != (H, S, A) or self.transitions.shape != (H, S, A, S):
            raise InvalidArgumentError("reward or transition arrays have the wrong shape")
        if self.initial_dist.shape != (S,):
            raise InvalidArgumentError("initial distribution has the wrong shape")
        if np.any(self.transitions < 0):
            raise InvalidArgumentError("transition kernel has negative entries")
        if np.max(np.abs(self.transitions.sum(axis=3) - 1)) > KERNEL_TOLERANCE:
            raise InvalidArgumentError("transition kernel rows must sum to 1")
        rebuilt = reconstruct_kernel(self.form, self.factors)
        if rebuilt.shape != self.transitions.shape \
                or np.max(np.abs(rebuilt - self.transitions)) > KERNEL_TOLERANCE:
            raise InvalidArgumentError("transition kernel does not match its factors")
        if np.any(self.rewards < 0) or np.any(self.rewards > 1):
            raise InvalidArgumentError("rewards must lie in [0, 1]")
        half_rank = self.rank_param // 2
        for t in range(H):
            sigma = np.linalg.svd(self.rewards[t], compute_uv=False)
            if sigma[0] > 0 and np.any(sigma[half_rank:] >= RANK_TOLERANCE * sigma[0]):
                raise InvalidArgumentError(
                    "reward at step {} has numerical rank above {}".format(t + 1, half_rank))
        if np.any(self.initial_dist < 0) \
                or abs(self.initial_dist.sum() - 1) > INITIAL_DIST_TOLERANCE:
            raise InvalidArgumentError("initial distribution must be a distribution")

    def to_json_dict(self) -> Dict[str, Any]:
        # json writes floats with repr, which round-trips every double exactly.
        return {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "horizon": self.horizon,
            "rank_param": self.rank_param,
            "form": self.form.value,
            "factors": [factor.tolist() for factor in self.factors],
            "rewards": self.rewards.tolist(),
            "initial_dist": self.initial_dist.tolist(),
        }

    @classmethod
    def from_json_dict(cls, data: Dict[str, Any]) -> "LowRankMDP":
        form = FactorizationForm(data["form"])
        factors = tuple(np.asarray(factor, dtype=float) for factor in data["factors"])
        mdp = cls(
                num_states=int(data["num_states"]),
                num_actions=int(data["num_actions"]),
                horizon=int(data["horizon"]),
                rank_param=int(data["rank_param"]),
                form=form,
                factors=factors,
                rewards=np.asarray(data["rewards"], dtype=float),
                transitions=reconstruct_kernel(form, factors),
                initial_dist=np.asarray(data["initial_dist"], dtype=float))
        mdp.validate()
        return mdp


def save_mdp(mdp: LowRankMDP, path: str) -> None:
    with open(path, "w") as f:
        json.dump(mdp.to_json_dict(), f)


def load_mdp(path: str) -> LowRankMDP:
    with open(path) as f:
        return LowRankMDP.from_json_dict(json.load(f))


def reconstruct_kernel(form: FactorizationForm, factors: Tuple[np.ndarray, ...]) -> np.ndarray:
    """Rebuilds P[t, s, a, s'] from the declared factors.

    form i (and uniform): u[t, i, s', s], w[t, i, a]
    form ii:              u[t, i, s],     w[t, i, s', a]
    fully factorized:     u[t, i, s'],    v[t, i, s],  w[t, i, a]
    """
    if form in (FactorizationForm.FORM_I, FactorizationForm.UNIFORM):
        u, w = factors
        return np.einsum("tixs,tia->tsax", u, w)
    elif form is FactorizationForm.FORM_II:
        u, w = factors
        return np.einsum("tis,tixa->tsax", u, w)
    else:
        assert form is FactorizationForm.FULLY_FACTORIZED, "unknown form {}".format(form)
        u, v, w = factors
        return np.einsum("tix,tis,tia->tsax", u, v, w)


def _normalize(x: np.ndarray, axis: int) -> np.ndarray:
    return x / x.sum(axis=axis, keepdims=True)


def _fully_factorized(rng: np.random.Generator, H: int, k: int, S: int, A: int
                      ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Positive factors (u, v, w) with sum_i v_i(s) w_i(a) = 1 for every (s, a).

    Components are paired into groups (0, 1), (2, 3), ...; v mixes the groups
    per state and w mixes the components of a group per action, so every
    P(.|s,a) is a convex combination of the u_i. A lone component has w = 1.
    """
    group = np.arange(k) // 2
    num_groups = int(group[-1]) + 1
    u = _normalize(rng.uniform(size=(H, k, S)), axis=2)
    v = _normalize(rng.uniform(size=(H, num_groups, S)), axis=1)[:, group]
    w = rng.uniform(0.1, 1.0, size=(H, k, A))
    totals = np.stack([w[:, group == g].sum(axis=1) for g in range(num_groups)], axis=1)
    return u, v, w / totals[:, group]


def random_low_rank_mdp(num_states: int, num_actions: int, horizon: int, rank_param: int,
                        seed: int, form: FactorizationForm) -> LowRankMDP:
    """Draws an MDP satisfying the low-rank assumption by construction.

    Factors are uniform[0, 1] draws normalized so that every P_t(.|s,a) sums to 1;
    rewards are rank-floor(d/2) products of uniform factors rescaled into [0, 1].
    """
    S, A, H, d = num_states, num_actions, horizon, rank_param
    if min(S, A, H) < 1:
        raise InvalidArgumentError("S, A and H must be positive")
    if not 2 <= d <= 2 * min(S, A):
        raise InvalidArgumentError(
            "rank parameter {} outside [2, {}]".format(d, 2 * min(S, A)))
    k = d // 2
    rng = np.random.default_rng(seed)

    factors: Tuple[np.ndarray, ...]
    if form is FactorizationForm.FORM_I:
        factors = (_normalize(rng.uniform(size=(H, k, S, S)), axis=2),
                   _normalize(rng.uniform(size=(H, k, A)), axis=1))
    elif form is FactorizationForm.FORM_II:
        factors = (_normalize(rng.uniform(size=(H, k, S)), axis=1),
                   _normalize(rng.uniform(size=(H, k, S, A)), axis=2))
    elif form is FactorizationForm.FULLY_FACTORIZED:
        factors = _fully_factorized(rng, H, k, S, A)
    else:
        assert form is FactorizationForm.UNIFORM, "unknown form {}".format(form)
        factors = (np.full((H, 1, S, S), 1.0 / S), np.ones((H, 1, A)))

    left = rng.uniform(size=(H, S, k))
    right = rng.uniform(size=(H, A, k))
    rewards = np.einsum("tsi,tai->tsa", left, right)
    rewards /= rewards.max(axis=(1, 2), keepdims=True)

    if form is FactorizationForm.UNIFORM:
        initial_dist = np.full(S, 1.0 / S)
    else:
        initial_dist = _normalize(rng.uniform(size=S), axis=0)

    mdp = LowRankMDP(
            num_states=S, num_actions=A, horizon=H, rank_param=d, form=form,
            factors=factors, rewards=rewards, transitions=reconstruct_kernel(form, factors),
            initial_dist=initial_dist)
    mdp.validate()
    logging.debug("generated %s MDP with S=%d A=%d H=%d d=%d seed=%d",
                  form.value, S, A, H, d, seed)
    return mdp


def _check_dims(mdp: LowRankMDP, policy: Policy) -> None:
    expected = (mdp.horizon, mdp.num_states, mdp.num_actions)
    if policy.per_step.shape != expected:
        raise InvalidArgumentError(
            "policy shape {} does not match MDP {}".format(policy.per_step.shape, expected))


def occupancy_measures(mdp: LowRankMDP, policy: Policy) -> OccupancyMeasure:
    """Runs the forward recursion mu_{t+1} = sum d_t P_t, d_t = (mu_t 1^T) o pi_t."""
    _check_dims(mdp, policy)
    state_action = np.zeros((mdp.horizon, mdp.num_states, mdp.num_actions))
    state_only = np.zeros((mdp.horizon, mdp.num_states))
    mu = mdp.initial_dist
    for t in range(mdp.horizon):
        state_only[t] = mu
        state_action[t] = mu[:, None] * policy.per_step[t]
        mu = np.einsum("sa,sax->x", state_action[t], mdp.transitions[t])
    occupancy = OccupancyMeasure(state_action, state_only)
    occupancy.validate()
    return occupancy


def bellman_apply(kernel: Optional[np.ndarray],
                  reward: np.ndarray,
                  next_policy: Optional[np.ndarray],
                  f: np.ndarray,
                  support: Optional[np.ndarray] = None) -> np.ndarray:
    """Computes (Bf)(s,a) = r(s,a) + sum_{s',a'} P(s'|s,a) pi(a'|s') f(s',a').

    kernel is S x A x S; rows of an empirical kernel that are undefined hold NaN,
    as do unobserved rewards. Entries outside support come back as NaN. With no
    next_policy or no kernel (the last step) the continuation is zero.
    """
    if not np.all(np.isfinite(f)):
        raise InvalidArgumentError("continuation values must be finite")
    requested = np.ones(reward.shape, dtype=bool) if support is None else support
    terminal = kernel is None or next_policy is None
    defined = np.isfinite(reward)
    if not terminal:
        assert kernel is not None
        defined &= np.all(np.isfinite(kernel), axis=2)
    if np.any(requested & ~defined):
        raise OffSupportError(
            "{} requested entries have no defined kernel row or reward".format(
                int(np.sum(requested & ~defined))))

    out = np.full(reward.shape, np.nan)
    out[requested] = reward[requested]
    if not terminal:
        assert kernel is not None and next_policy is not None
        values = np.sum(next_policy * f, axis=1)
        out[requested] += kernel[requested] @ values
    return out


def exact_q_values(mdp: LowRankMDP, policy: Policy) -> np.ndarray:
    """Q_t^pi for every step as an H x S x A array, by backward induction."""
    _check_dims(mdp, policy)
    q_values = np.zeros((mdp.horizon, mdp.num_states, mdp.num_actions))
    continuation = np.zeros((mdp.num_states, mdp.num_actions))
    for t in reversed(range(mdp.horizon)):
        next_policy = policy.per_step[t + 1] if t + 1 < mdp.horizon else None
        q_values[t] = bellman_apply(
                mdp.transitions[t], mdp.rewards[t], next_policy, continuation)
        continuation = q_values[t]
    return q_values


def exact_return(mdp: LowRankMDP, policy: Policy) -> float:
    """J^pi, computed from Q_1 and cross-checked against the occupancy-weighted rewards."""
    q_values = exact_q_values(mdp, policy)
    from_q = float(np.sum(mdp.initial_dist[:, None] * policy.per_step[0] * q_values[0]))
    occupancy = occupancy_measures(mdp, policy)
    from_occupancy = float(np.sum(occupancy.state_action * mdp.rewards))
    if abs(from_q - from_occupancy) > RETURN_TOLERANCE:
        raise ConsistencyError(
            "return formulas disagree: {!r} vs {!r}".format(from_q, from_occupancy))
    return from_q


def sample_categorical(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draws one index per row of an N x K matrix of row distributions."""
    cumulative = np.cumsum(probs, axis=1)
    # Pin the last entry to exactly 1 so zero-probability tail entries are never drawn.
    cumulative /= cumulative[:, -1:]
    draws = rng.random(probs.shape[0])[:, None]
    return np.minimum(np.sum(cumulative <= draws, axis=1), probs.shape[1] - 1)


def monte_carlo_q_value(mdp: LowRankMDP, policy: Policy, t: int, state: int, action: int,
                        num_rollouts: int, seed: int) -> Tuple[float, float]:
    """Estimates Q_t(s,a) by rollouts; returns (mean, standard error)."""
    rng = np.random.default_rng(seed)
    totals = np.full(num_rollouts, mdp.rewards[t, state, action])
    states = np.full(num_rollouts, state)
    actions = np.full(num_rollouts, action)
    for step in range(t + 1, mdp.horizon):
        states = sample_categorical(mdp.transitions[step - 1, states, actions], rng)
        actions = sample_categorical(policy.per_step[step, states], rng)
        totals += mdp.rewards[step, states, actions]
    return float(totals.mean()), float(totals.std(ddof=1) / np.sqrt(num_rollouts))
