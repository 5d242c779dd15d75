import os
import subprocess
from abc import ABC, abstractmethod
from enum import Enum
from importlib import metadata
from typing import Any, Dict, List, NamedTuple, Optional, Sequence

import numpy as np

DISTRIBUTION = "lowrank-ope"
# Used when neither a git checkout nor an installed distribution is found.
FALLBACK_VERSION = "0.1.0"


def describe_version(root: Optional[str] = None) -> str:
    """`git describe` of the source checkout at root, else the installed version."""
    if root is None:
        root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    if os.path.exists(os.path.join(root, ".git")):
        try:
            described = subprocess.run(
                    ["git", "describe", "--tags", "--always", "--dirty"], cwd=root,
                    capture_output=True, text=True, check=True, timeout=5).stdout.strip()
            if described:
                return "{}-{}".format(DISTRIBUTION, described)
        except (OSError, subprocess.SubprocessError):
            pass
    try:
        return "{}-{}".format(DISTRIBUTION, metadata.version(DISTRIBUTION))
    except metadata.PackageNotFoundError:
        return "{}-{}".format(DISTRIBUTION, FALLBACK_VERSION)


# Version string carried by every experiment artifact.
VERSION = describe_version()
# Occupancy entries at or below this are treated as outside the support.
SUPPORT_THRESHOLD = 1e-12
# Tolerance on the row sums of a policy.
POLICY_TOLERANCE = 1e-12
# Tolerance on the total mass of an occupancy measure.
OCCUPANCY_TOLERANCE = 1e-9


class InvalidArgumentError(ValueError):
    """Indicates a precondition of a public operation was violated."""


class OffSupportError(Exception):
    """Indicates an undefined empirical quantity was requested."""


class ConsistencyError(Exception):
    """Indicates two computations that must agree did not."""


class FactorizationForm(Enum):
    """The declared low-rank structure of the transition kernels."""
    # P_t(s'|s,a) = sum_i u_i(s', s) w_i(a)
    FORM_I = "i"
    # P_t(s'|s,a) = sum_i u_i(s) w_i(s', a)
    FORM_II = "ii"
    # P_t(s'|s,a) = sum_i u_i(s') v_i(s) w_i(a), which satisfies both forms.
    FULLY_FACTORIZED = "fully_factorized"
    # P_t(s'|s,a) = 1/S everywhere.
    UNIFORM = "uniform"


class EvaluationMode(Enum):
    INFINITE_SAMPLE = "infinite"
    FINITE_SAMPLE = "finite"


class ConstraintMode(Enum):
    """How the matrix estimation program ties the estimate to the observations."""
    EQUALITY = "equality"
    INNER_PRODUCT = "inner_product"


class SlackMode(Enum):
    """How the inner-product slack of the finite-sample program is obtained."""
    # Exact |<rho_t, Z_t - Y_t>| from the true MDP.
    ORACLE = "oracle"
    # c * H * sqrt(S log(HS/delta) / K) from the data size alone.
    PLUGIN = "plugin"


def support_mask(x: np.ndarray, threshold: float = SUPPORT_THRESHOLD) -> np.ndarray:
    """Boolean mask of the entries of a nonnegative array above the zero guard."""
    return np.asarray(x) > threshold


class Policy(NamedTuple):
    """A horizon-indexed sequence of row-stochastic S x A matrices.

    per_step[t] is the policy at step t+1 (steps are stored zero-indexed).
    """
    per_step: np.ndarray

    @property
    def horizon(self) -> int:
        return int(self.per_step.shape[0])

    @property
    def num_states(self) -> int:
        return int(self.per_step.shape[1])

    @property
    def num_actions(self) -> int:
        return int(self.per_step.shape[2])

    def validate(self) -> None:
        if self.per_step.ndim != 3:
            raise InvalidArgumentError("policy must be an H x S x A array")
        if np.any(self.per_step < 0):
            raise InvalidArgumentError("policy has negative probabilities")
        row_sums = self.per_step.sum(axis=2)
        if np.max(np.abs(row_sums - 1)) > POLICY_TOLERANCE:
            raise InvalidArgumentError("policy rows must sum to 1")

    def to_json_dict(self) -> Dict[str, Any]:
        return {"per_step": self.per_step.tolist()}

    @classmethod
    def from_json_dict(cls, data: Dict[str, Any]) -> "Policy":
        policy = cls(np.asarray(data["per_step"], dtype=float))
        policy.validate()
        return policy

    @classmethod
    def uniform(cls, num_states: int, num_actions: int, horizon: int) -> "Policy":
        return cls(np.full((horizon, num_states, num_actions), 1.0 / num_actions))

    @classmethod
    def deterministic(cls, actions: Sequence[Sequence[int]], num_actions: int) -> "Policy":
        """Builds the policy taking actions[t][s] in state s at step t+1."""
        table = np.asarray(actions, dtype=int)
        horizon, num_states = table.shape
        per_step = np.zeros((horizon, num_states, num_actions))
        steps, states = np.meshgrid(np.arange(horizon), np.arange(num_states), indexing="ij")
        per_step[steps, states, table] = 1.0
        return cls(per_step)

    @classmethod
    def random_support(cls, num_states: int, num_actions: int, horizon: int,
                       support_size: int, rng: np.random.Generator) -> "Policy":
        """Uniform over a uniformly drawn subset of support_size actions, per state and step."""
        if not 1 <= support_size <= num_actions:
            raise InvalidArgumentError(
                "support size {} outside [1, {}]".format(support_size, num_actions))
        per_step = np.zeros((horizon, num_states, num_actions))
        for t in range(horizon):
            for s in range(num_states):
                actions = rng.choice(num_actions, size=support_size, replace=False)
                per_step[t, s, actions] = 1.0 / support_size
        return cls(per_step)


class OccupancyMeasure(NamedTuple):
    """State-action (d_t) and state (mu_t) occupancy measures for every step."""
    state_action: np.ndarray
    state_only: np.ndarray

    def validate(self) -> None:
        totals = self.state_action.sum(axis=(1, 2))
        if np.max(np.abs(totals - 1)) > OCCUPANCY_TOLERANCE:
            raise ConsistencyError("occupancy measure does not sum to 1")
        marginals = self.state_action.sum(axis=2)
        if np.max(np.abs(marginals - self.state_only)) > OCCUPANCY_TOLERANCE:
            raise ConsistencyError("state occupancy is not the marginal of d_t")

    def support(self, t: int) -> np.ndarray:
        return support_mask(self.state_action[t])


class Component(ABC):
    @abstractmethod
    def setup(self) -> None:
        pass

    @abstractmethod
    def off(self) -> None:
        pass


class Output(Component):
    @abstractmethod
    def output_rows(self, rows: List[Any], force: bool = False) -> None:
        pass


def optional_float(value: Optional[float]) -> str:
    """Formats a possibly missing or infinite value for tables and CSVs."""
    if value is None:
        return ""
    return repr(float(value))
