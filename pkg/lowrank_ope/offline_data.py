import csv
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Dict, List, NamedTuple, Tuple

import numpy as np

from lowrank_ope.common import InvalidArgumentError, Policy
from lowrank_ope.mdp import LowRankMDP, sample_categorical

# Trajectories drawn from one generator substream.
BLOCK_SIZE = 4096


class OfflineDataset(NamedTuple):
    """K trajectories of H (state, action, reward) triples.

    states[k, t], actions[k, t] and rewards[k, t] describe step t+1 of trajectory k.
    """
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    seed: int
    num_states: int
    num_actions: int
    horizon: int

    @property
    def num_trajectories(self) -> int:
        return int(self.states.shape[0])

    def validate(self) -> None:
        shape = (self.num_trajectories, self.horizon)
        if self.num_trajectories < 1:
            raise InvalidArgumentError("dataset has no trajectories")
        if self.actions.shape != shape or self.rewards.shape != shape \
                or self.states.shape != shape:
            raise InvalidArgumentError("trajectory arrays must all be K x H")
        if np.any(self.states < 0) or np.any(self.states >= self.num_states):
            raise InvalidArgumentError("state index out of range")
        if np.any(self.actions < 0) or np.any(self.actions >= self.num_actions):
            raise InvalidArgumentError("action index out of range")


class EmpiricalModel(NamedTuple):
    """Counts, empirical occupancy and the partial empirical kernel of a dataset.

    empirical_kernel[t, s, a] is P_hat_{t+1}(.|s,a) for t < H-1 and holds NaN where
    n_{t+1}(s,a) = 0. observed_rewards is NaN on unvisited pairs.
    """
    counts: np.ndarray
    empirical_occupancy: np.ndarray
    empirical_kernel: np.ndarray
    observed_rewards: np.ndarray
    num_trajectories: int

    def support(self, t: int) -> np.ndarray:
        return self.counts[t] > 0

    def kernel(self, t: int) -> np.ndarray:
        return self.empirical_kernel[t]


def _sample_block(mdp: LowRankMDP, behavior: Policy, size: int,
                  seed_seq: np.random.SeedSequence) -> Tuple[np.ndarray, np.ndarray]:
    rng = np.random.Generator(np.random.Philox(seed_seq))
    states = np.zeros((size, mdp.horizon), dtype=np.int64)
    actions = np.zeros((size, mdp.horizon), dtype=np.int64)
    state = sample_categorical(np.broadcast_to(mdp.initial_dist, (size, mdp.num_states)), rng)
    for t in range(mdp.horizon):
        states[:, t] = state
        actions[:, t] = sample_categorical(behavior.per_step[t, state], rng)
        if t + 1 < mdp.horizon:
            state = sample_categorical(mdp.transitions[t, state, actions[:, t]], rng)
    return states, actions


def sample_trajectories(mdp: LowRankMDP, behavior: Policy, num_trajectories: int,
                        seed: int, workers: int = 1) -> OfflineDataset:
    """Samples K independent behavior trajectories.

    Trajectories are drawn in fixed-size blocks, each from its own counter-based
    substream of the seed, so the dataset does not depend on the worker count.
    """
    if num_trajectories < 1:
        raise InvalidArgumentError("need at least one trajectory")
    behavior.validate()
    num_blocks = -(-num_trajectories // BLOCK_SIZE)
    sizes = [min(BLOCK_SIZE, num_trajectories - b * BLOCK_SIZE) for b in range(num_blocks)]
    substreams = np.random.SeedSequence(seed).spawn(num_blocks)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(
                lambda job: _sample_block(mdp, behavior, job[0], job[1]),
                zip(sizes, substreams)))
    else:
        blocks = [_sample_block(mdp, behavior, size, sub) for size, sub in zip(sizes, substreams)]

    states = np.concatenate([block[0] for block in blocks])
    actions = np.concatenate([block[1] for block in blocks])
    steps = np.arange(mdp.horizon)[None, :]
    rewards = mdp.rewards[steps, states, actions]
    logging.debug("sampled %d trajectories with seed %d", num_trajectories, seed)
    return OfflineDataset(
            states=states, actions=actions, rewards=rewards, seed=seed,
            num_states=mdp.num_states, num_actions=mdp.num_actions, horizon=mdp.horizon)


def empirical_model(dataset: OfflineDataset) -> EmpiricalModel:
    dataset.validate()
    S, A, H = dataset.num_states, dataset.num_actions, dataset.horizon
    K = dataset.num_trajectories
    counts = np.zeros((H, S, A), dtype=np.int64)
    observed_rewards = np.full((H, S, A), np.nan)
    kernel = np.full((max(H - 1, 0), S, A, S), np.nan)
    for t in range(H):
        pair = dataset.states[:, t] * A + dataset.actions[:, t]
        counts[t] = np.bincount(pair, minlength=S * A).reshape(S, A)
        # Rewards are noiseless, so every visit of a pair carries the same value.
        observed_rewards[t, dataset.states[:, t], dataset.actions[:, t]] = dataset.rewards[:, t]
        if t + 1 < H:
            triple = pair * S + dataset.states[:, t + 1]
            transitions = np.bincount(triple, minlength=S * A * S).reshape(S, A, S)
            visited = counts[t] > 0
            kernel[t][visited] = transitions[visited] / counts[t][visited][:, None]
    return EmpiricalModel(
            counts=counts,
            empirical_occupancy=counts / K,
            empirical_kernel=kernel,
            observed_rewards=observed_rewards,
            num_trajectories=K)


def empirical_initial_distribution(dataset: OfflineDataset) -> np.ndarray:
    """The empirical distribution of the first state of each trajectory."""
    counts = np.bincount(dataset.states[:, 0], minlength=dataset.num_states)
    return counts / dataset.num_trajectories


def save_dataset(dataset: OfflineDataset, header_path: str) -> None:
    """Writes a JSON header and, next to it, the CSV of (k, t, s, a, r) rows."""
    csv_path = os.path.splitext(header_path)[0] + ".csv"
    header: Dict[str, Any] = {
        "num_states": dataset.num_states,
        "num_actions": dataset.num_actions,
        "horizon": dataset.horizon,
        "num_trajectories": dataset.num_trajectories,
        "seed": dataset.seed,
        "trajectories": os.path.basename(csv_path),
    }
    with open(header_path, "w") as f:
        json.dump(header, f)
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["k", "t", "s", "a", "r"])
        for k in range(dataset.num_trajectories):
            for t in range(dataset.horizon):
                writer.writerow([k, t, int(dataset.states[k, t]), int(dataset.actions[k, t]),
                                 repr(float(dataset.rewards[k, t]))])


def load_dataset(header_path: str) -> OfflineDataset:
    with open(header_path) as f:
        header = json.load(f)
    K, H = int(header["num_trajectories"]), int(header["horizon"])
    states = np.zeros((K, H), dtype=np.int64)
    actions = np.zeros((K, H), dtype=np.int64)
    rewards = np.zeros((K, H))
    csv_path = os.path.join(os.path.dirname(header_path), header["trajectories"])
    with open(csv_path, newline="") as f:
        rows: List[Dict[str, str]] = list(csv.DictReader(f))
    if len(rows) != K * H:
        raise InvalidArgumentError(
            "{} has {} rows, expected K * H = {}".format(csv_path, len(rows), K * H))
    seen = np.zeros((K, H), dtype=bool)
    for row in rows:
        k, t = int(row["k"]), int(row["t"])
        if not (0 <= k < K and 0 <= t < H):
            raise InvalidArgumentError("row index (k={}, t={}) out of range".format(k, t))
        if seen[k, t]:
            raise InvalidArgumentError("row (k={}, t={}) appears twice".format(k, t))
        seen[k, t] = True
        states[k, t] = int(row["s"])
        actions[k, t] = int(row["a"])
        rewards[k, t] = float(row["r"])
    dataset = OfflineDataset(
            states=states, actions=actions, rewards=rewards, seed=int(header["seed"]),
            num_states=int(header["num_states"]), num_actions=int(header["num_actions"]),
            horizon=H)
    dataset.validate()
    return dataset
