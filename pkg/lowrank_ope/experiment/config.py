import hashlib
import json
from enum import Enum
from itertools import product
from typing import Any, Dict, List, NamedTuple, Optional, Tuple

from lowrank_ope.common import EvaluationMode, InvalidArgumentError, SlackMode
from lowrank_ope.estimation import DiscrepancyConfig, SolverConfig
from lowrank_ope.ope import SlackConfig

# Hex digits of the config digest carried by every CSV row.
HASH_LENGTH = 12


class ExperimentKind(Enum):
    DISJOINT_SUPPORT = "disjoint_support"
    BANDIT = "bandit"
    BOUND_CHECK = "bound_check"
    RATE_CHECK = "rate_check"
    POLICY_OPT_DEMO = "policy_opt_demo"


DESCRIPTIONS = {
    ExperimentKind.DISJOINT_SUPPORT:
        "uniform kernel, random size-m policy supports, error vs. support size",
    ExperimentKind.BANDIT:
        "H=1, measured error vs. distribution- and policy-level discrepancy bounds",
    ExperimentKind.BOUND_CHECK:
        "random low-rank MDPs, measured error vs. the infinite/finite-sample bounds",
    ExperimentKind.RATE_CHECK:
        "behavior-policy evaluation error vs. number of trajectories",
    ExperimentKind.POLICY_OPT_DEMO:
        "H=1 candidate-set optimization, suboptimality vs. its guarantee",
}


class Cell(NamedTuple):
    """One point of the experiment grid. S = A = n."""
    n: int
    m: int
    num_trajectories: int
    horizon: int
    rank_param: int
    mode: EvaluationMode


class ExperimentConfig(NamedTuple):
    kind: ExperimentKind
    n_values: Tuple[int, ...] = (8,)
    m_values: Tuple[int, ...] = (2,)
    k_values: Tuple[int, ...] = (1000,)
    h_values: Tuple[int, ...] = (2,)
    d_values: Tuple[int, ...] = (2,)
    modes: Tuple[EvaluationMode, ...] = (EvaluationMode.INFINITE_SAMPLE,)
    n_seeds: int = 10
    seed: int = 0
    delta: float = 0.05
    # The constant C of the statistical term; None calibrates it on held-out seeds.
    constant: Optional[float] = None
    calibration_seeds: int = 10
    # Candidate-set size and per-step budget B_t of policy_opt_demo.
    n_candidates: int = 10
    budget: float = 0.05
    solver: SolverConfig = SolverConfig()
    slack: SlackConfig = SlackConfig(mode=SlackMode.ORACLE)
    discrepancy: DiscrepancyConfig = DiscrepancyConfig()
    workers: int = 1
    record_runtime: bool = False
    output: Optional[str] = None

    def validate(self) -> None:
        grids = (self.n_values, self.m_values, self.k_values, self.h_values, self.d_values)
        if any(len(grid) == 0 for grid in grids) or not self.modes:
            raise InvalidArgumentError("every grid needs at least one value")
        if any(value < 1 for grid in grids for value in grid):
            raise InvalidArgumentError("grid values must be positive")
        if self.n_seeds < 1 or self.calibration_seeds < 1 or self.n_candidates < 1:
            raise InvalidArgumentError("seed and candidate counts must be positive")
        if not 0 < self.delta < 1:
            raise InvalidArgumentError("delta must lie in (0, 1)")
        if max(self.m_values) > min(self.n_values):
            raise InvalidArgumentError("support size m cannot exceed the number of actions")
        if any(not 2 <= d <= 2 * n for d in self.d_values for n in self.n_values):
            raise InvalidArgumentError("rank parameter must lie in [2, 2n]")

    def cells(self) -> List[Cell]:
        horizons = (1,) if self.kind in (ExperimentKind.BANDIT, ExperimentKind.POLICY_OPT_DEMO) \
            else self.h_values
        modes = (EvaluationMode.FINITE_SAMPLE,) \
            if self.kind in (ExperimentKind.RATE_CHECK, ExperimentKind.POLICY_OPT_DEMO) \
            else self.modes
        return [Cell(*values) for values in product(
                self.n_values, self.m_values, self.k_values, horizons, self.d_values, modes)]

    def to_json_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "n_values": list(self.n_values),
            "m_values": list(self.m_values),
            "k_values": list(self.k_values),
            "h_values": list(self.h_values),
            "d_values": list(self.d_values),
            "modes": [mode.value for mode in self.modes],
            "n_seeds": self.n_seeds,
            "seed": self.seed,
            "delta": self.delta,
            "constant": self.constant,
            "calibration_seeds": self.calibration_seeds,
            "n_candidates": self.n_candidates,
            "budget": self.budget,
            "solver": self.solver._asdict(),
            "slack": {"mode": self.slack.mode.value, "scale": self.slack.scale,
                      "delta": self.slack.delta},
            "discrepancy": self.discrepancy._asdict(),
            "workers": self.workers,
            "record_runtime": self.record_runtime,
            "output": self.output,
        }

    @classmethod
    def from_json_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        fields = dict(data)
        fields["kind"] = ExperimentKind(data["kind"])
        for name in ("n_values", "m_values", "k_values", "h_values", "d_values"):
            if name in fields:
                fields[name] = tuple(int(v) for v in fields[name])
        if "modes" in fields:
            fields["modes"] = tuple(EvaluationMode(v) for v in fields["modes"])
        if "solver" in fields:
            fields["solver"] = SolverConfig(**fields["solver"])
        if "slack" in fields:
            slack = dict(fields["slack"])
            if "mode" in slack:
                slack["mode"] = SlackMode(slack["mode"])
            fields["slack"] = SlackConfig(**slack)
        if "discrepancy" in fields:
            fields["discrepancy"] = DiscrepancyConfig(**fields["discrepancy"])
        unknown = set(fields) - set(cls._fields)
        if unknown:
            raise InvalidArgumentError("unknown config keys: {}".format(sorted(unknown)))
        config = cls(**fields)
        config.validate()
        return config

    @classmethod
    def from_json(cls, path: str) -> "ExperimentConfig":
        with open(path) as f:
            return cls.from_json_dict(json.load(f))

    def config_hash(self) -> str:
        """Digest of everything that affects results (output path and workers excluded)."""
        data = self.to_json_dict()
        del data["output"]
        del data["workers"]
        canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:HASH_LENGTH]
