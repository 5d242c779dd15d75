"""Seeded experiment tasks and the driver that runs a grid of them."""
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from lowrank_ope.common import EvaluationMode, FactorizationForm, Policy
from lowrank_ope.estimation import (
        concentrability_coefficient, empirical_operator_discrepancy, operator_discrepancy,
        policy_operator_discrepancy,
)
from lowrank_ope.experiment.checks import calibrate_constant
from lowrank_ope.experiment.config import Cell, ExperimentConfig, ExperimentKind
from lowrank_ope.mdp import exact_return, LowRankMDP, occupancy_measures, random_low_rank_mdp
from lowrank_ope.offline_data import sample_trajectories
from lowrank_ope.ope import (
        bound_finite, bound_infinite, evaluate_policy_finite, evaluate_policy_infinite,
        statistical_term,
)
from lowrank_ope.policy_opt import build_candidate_set, optimize_policy

# Seeds of the calibration block start this far above the experiment seeds.
CALIBRATION_OFFSET = 1000000
# Substream keys of one task's seed.
BEHAVIOR_KEY = 1
TARGET_KEY = 2
DATA_KEY = 3
CANDIDATE_KEY = 4


class Task(NamedTuple):
    config: ExperimentConfig
    cell: Cell
    seed: int


class Measurement(NamedTuple):
    """Everything one task measures, before the constant C is fixed."""
    cell: Cell
    seed: int
    measured_error: float
    bound_inf: Optional[float]
    # The part of the finite-sample bound that does not scale with C.
    shift: float
    # The statistical term at C = 1.
    shape: float
    dis: Optional[float]
    emp_dis: Optional[float]
    conc_coeff: Optional[float]
    runtime_ms: float
    policy_bound: Optional[float]


class ResultRow(NamedTuple):
    experiment: str
    n: int
    m: int
    S: int
    A: int
    H: int
    d: int
    K: int
    # The integer seed, or "median" / "iqr" on aggregate rows.
    seed: str
    mode: str
    measured_error: float
    bound_inf: Optional[float]
    bound_fin: Optional[float]
    dis: Optional[float]
    emp_dis: Optional[float]
    conc_coeff: Optional[float]
    runtime_ms: float
    policy_bound: Optional[float]


class ExperimentResult(NamedTuple):
    config: ExperimentConfig
    constant: float
    rows: List[ResultRow]
    aggregates: List[ResultRow]


def _rng(seed: int, key: int) -> np.random.Generator:
    return np.random.default_rng([seed, key])


def _subseed(seed: int, key: int) -> int:
    return int(np.random.SeedSequence([seed, key]).generate_state(1)[0])


def _estimate(task: Task, mdp: LowRankMDP, behavior: Policy, target: Policy) -> float:
    config, cell = task.config, task.cell
    if cell.mode is EvaluationMode.INFINITE_SAMPLE:
        return evaluate_policy_infinite(mdp, behavior, target, config.solver).estimate
    dataset = sample_trajectories(mdp, behavior, cell.num_trajectories,
                                  _subseed(task.seed, DATA_KEY))
    run = evaluate_policy_finite(dataset, target, mdp.initial_dist, config.solver, config.slack,
                                 mdp=mdp)
    return run.estimate


def _measure_evaluation(task: Task, mdp: LowRankMDP, behavior: Policy,
                        target: Policy) -> Measurement:
    config, cell = task.config, task.cell
    started = time.perf_counter()
    estimate = _estimate(task, mdp, behavior, target)
    elapsed = 1000 * (time.perf_counter() - started)

    bound_inf, dis_steps = bound_infinite(mdp, behavior, target, config.discrepancy)
    finite = bound_finite(mdp, behavior, target, cell.num_trajectories, config.delta,
                          constant=1.0, warn_regime=False)
    behavior_occupancy = occupancy_measures(mdp, behavior).state_action
    target_occupancy = occupancy_measures(mdp, target).state_action
    H = mdp.horizon
    return Measurement(
            cell=cell,
            seed=task.seed,
            measured_error=abs(estimate - exact_return(mdp, target)),
            bound_inf=bound_inf,
            shift=finite.discrepancy_term,
            shape=finite.statistical_term,
            dis=float(sum(dis_steps)),
            emp_dis=float(sum(empirical_operator_discrepancy(
                behavior_occupancy[t], target_occupancy[t]) for t in range(H))),
            conc_coeff=max(concentrability_coefficient(
                behavior_occupancy[t], target_occupancy[t]) for t in range(H)),
            runtime_ms=elapsed if config.record_runtime else 0.0,
            policy_bound=None)


def _disjoint_support(task: Task) -> Measurement:
    cell = task.cell
    n, H = cell.n, cell.horizon
    mdp = random_low_rank_mdp(n, n, H, cell.rank_param, task.seed, FactorizationForm.UNIFORM)
    behavior = Policy.random_support(n, n, H, cell.m, _rng(task.seed, BEHAVIOR_KEY))
    target = Policy.random_support(n, n, H, cell.m, _rng(task.seed, TARGET_KEY))
    return _measure_evaluation(task, mdp, behavior, target)


def _bound_check(task: Task) -> Measurement:
    cell = task.cell
    n, H = cell.n, cell.horizon
    mdp = random_low_rank_mdp(n, n, H, cell.rank_param, task.seed, FactorizationForm.FORM_I)
    behavior = Policy.random_support(n, n, H, cell.m, _rng(task.seed, BEHAVIOR_KEY))
    target = Policy.random_support(n, n, H, cell.m, _rng(task.seed, TARGET_KEY))
    return _measure_evaluation(task, mdp, behavior, target)


def _rate_check(task: Task) -> Measurement:
    cell = task.cell
    n, H = cell.n, cell.horizon
    mdp = random_low_rank_mdp(n, n, H, cell.rank_param, task.seed, FactorizationForm.FORM_I)
    behavior = Policy.random_support(n, n, H, cell.m, _rng(task.seed, BEHAVIOR_KEY))
    return _measure_evaluation(task, mdp, behavior, behavior)


def _bandit(task: Task) -> Measurement:
    config, cell = task.config, task.cell
    n, d = cell.n, cell.rank_param
    mdp = random_low_rank_mdp(n, n, 1, d, task.seed, FactorizationForm.FORM_I)
    behavior = Policy.random_support(n, n, 1, cell.m, _rng(task.seed, BEHAVIOR_KEY))
    target = Policy.random_support(n, n, 1, cell.m, _rng(task.seed, TARGET_KEY))
    measurement = _measure_evaluation(task, mdp, behavior, target)

    mu = mdp.initial_dist
    policy_level = policy_operator_discrepancy(
            behavior.per_step[0], target.per_step[0], config.discrepancy)
    # diag(mu) pi* is feasible for the distribution-level program, so starting there
    # keeps the distribution-level value below the policy-level one.
    distribution_level = operator_discrepancy(
            mu[:, None] * behavior.per_step[0], mu[:, None] * target.per_step[0],
            config.discrepancy, extra_starts=[mu[:, None] * policy_level.minimizer])
    scale = 2 * np.sqrt(d * n * n)
    return measurement._replace(
            bound_inf=scale * distribution_level.value,
            dis=distribution_level.value,
            policy_bound=scale * float(np.max(mu)) * policy_level.value)


def _policy_opt_demo(task: Task) -> Measurement:
    config, cell = task.config, task.cell
    n, d, K = cell.n, cell.rank_param, cell.num_trajectories
    mdp = random_low_rank_mdp(n, n, 1, d, task.seed, FactorizationForm.FORM_I)
    behavior = Policy.random_support(n, n, 1, cell.m, _rng(task.seed, BEHAVIOR_KEY))
    candidates = build_candidate_set(behavior, [config.budget], d, config.n_candidates,
                                     _subseed(task.seed, CANDIDATE_KEY))
    started = time.perf_counter()
    dataset = sample_trajectories(mdp, behavior, K, _subseed(task.seed, DATA_KEY))
    result = optimize_policy(dataset, candidates, mdp.initial_dist, config.solver, config.slack,
                             mdp=mdp)
    elapsed = 1000 * (time.perf_counter() - started)
    returns = [exact_return(mdp, policy) for policy in candidates.policies]
    shift = 4 * np.sqrt(d * n * n) * config.budget
    return Measurement(
            cell=cell,
            seed=task.seed,
            measured_error=max(returns) - returns[result.best_index],
            bound_inf=None,
            shift=float(shift),
            shape=statistical_term(1, n, n, d, K, config.delta, 1.0,
                                   num_policies=len(candidates.policies)),
            dis=None,
            emp_dis=None,
            conc_coeff=None,
            runtime_ms=elapsed if config.record_runtime else 0.0,
            policy_bound=None)


RUNNERS: Dict[ExperimentKind, Callable[[Task], Measurement]] = {
    ExperimentKind.DISJOINT_SUPPORT: _disjoint_support,
    ExperimentKind.BANDIT: _bandit,
    ExperimentKind.BOUND_CHECK: _bound_check,
    ExperimentKind.RATE_CHECK: _rate_check,
    ExperimentKind.POLICY_OPT_DEMO: _policy_opt_demo,
}


def run_task(task: Task) -> Measurement:
    return RUNNERS[task.config.kind](task)


def _run_all(tasks: Sequence[Task], workers: int) -> List[Measurement]:
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            measurements = list(pool.map(run_task, tasks))
    else:
        measurements = [run_task(task) for task in tasks]
    # Order by grid position, then seed, independently of scheduling.
    order = {cell: i for i, cell in enumerate(tasks[0].config.cells())} if tasks else {}
    return sorted(measurements, key=lambda m: (order[m.cell], m.seed))


def _finalize(config: ExperimentConfig, m: Measurement, constant: float) -> ResultRow:
    cell = m.cell
    bound_fin = m.shift + constant * m.shape
    policy_bound = bound_fin if config.kind is ExperimentKind.POLICY_OPT_DEMO else m.policy_bound
    return ResultRow(
            experiment=config.kind.value,
            n=cell.n, m=cell.m, S=cell.n, A=cell.n, H=cell.horizon, d=cell.rank_param,
            K=cell.num_trajectories,
            seed=str(m.seed),
            mode=cell.mode.value,
            measured_error=m.measured_error,
            bound_inf=m.bound_inf,
            bound_fin=bound_fin,
            dis=m.dis,
            emp_dis=m.emp_dis,
            conc_coeff=m.conc_coeff,
            runtime_ms=m.runtime_ms,
            policy_bound=policy_bound)


# Columns summarized by the aggregate rows.
NUMERIC_FIELDS = ("measured_error", "bound_inf", "bound_fin", "dis", "emp_dis", "conc_coeff",
                  "runtime_ms", "policy_bound")


def aggregate_rows(rows: Sequence[ResultRow]) -> List[ResultRow]:
    """A median row and an interquartile-range row per grid cell, in first-seen order."""
    groups: Dict[Tuple, List[ResultRow]] = {}
    for row in rows:
        groups.setdefault(row[:8] + (row.mode,), []).append(row)
    aggregates = []
    for group in groups.values():
        summaries: Dict[str, Dict[str, Optional[float]]] = {"median": {}, "iqr": {}}
        for field in NUMERIC_FIELDS:
            values = [getattr(row, field) for row in group if getattr(row, field) is not None]
            if not values:
                summaries["median"][field] = summaries["iqr"][field] = None
                continue
            with np.errstate(invalid="ignore"):
                q25, q50, q75 = np.percentile(values, [25, 50, 75])
                summaries["median"][field] = float(q50)
                summaries["iqr"][field] = float(q75 - q25)
        for label, summary in summaries.items():
            aggregates.append(group[0]._replace(seed=label, **summary))
    return aggregates


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Runs every (cell, seed) task and fixes the constant C of the statistical term.

    Unless the config pins C, it is calibrated on a held-out block of seeds of the
    finite-sample cells, then frozen for every row.
    """
    config.validate()
    cells = config.cells()
    logging.info("running %s: %d cells x %d seeds", config.kind.value, len(cells), config.n_seeds)
    tasks = [Task(config, cell, config.seed + i) for cell in cells for i in range(config.n_seeds)]
    measurements = _run_all(tasks, config.workers)

    constant = config.constant
    if constant is None:
        finite_cells = [cell for cell in cells if cell.mode is EvaluationMode.FINITE_SAMPLE]
        if finite_cells:
            held_out = [Task(config, cell, config.seed + CALIBRATION_OFFSET + i)
                        for cell in finite_cells for i in range(config.calibration_seeds)]
            calibration = _run_all(held_out, config.workers)
            constant = calibrate_constant(
                    [m.measured_error for m in calibration], [m.shift for m in calibration],
                    [m.shape for m in calibration])
            logging.info("calibrated C=%.6g on %d held-out runs", constant, len(calibration))
        else:
            constant = 1.0

    rows = [_finalize(config, m, constant) for m in measurements]
    logging.info("finished %s: %d rows", config.kind.value, len(rows))
    return ExperimentResult(config, constant, rows, aggregate_rows(rows))


def run_disjoint_support(config: ExperimentConfig) -> ExperimentResult:
    return run_experiment(config._replace(kind=ExperimentKind.DISJOINT_SUPPORT))


def run_bandit(config: ExperimentConfig) -> ExperimentResult:
    return run_experiment(config._replace(kind=ExperimentKind.BANDIT))


def run_bound_check(config: ExperimentConfig) -> ExperimentResult:
    return run_experiment(config._replace(kind=ExperimentKind.BOUND_CHECK))


def run_rate_check(config: ExperimentConfig) -> ExperimentResult:
    return run_experiment(config._replace(kind=ExperimentKind.RATE_CHECK))


def run_policy_opt_demo(config: ExperimentConfig) -> ExperimentResult:
    return run_experiment(config._replace(kind=ExperimentKind.POLICY_OPT_DEMO))
