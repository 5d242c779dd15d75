#!/usr/bin/env python3

import argparse
import json
import logging
import sys
from typing import Any, Dict, List, Optional

import numpy as np

from lowrank_ope.common import (
        ConsistencyError, EvaluationMode, FactorizationForm, InvalidArgumentError, OffSupportError,
        Policy, SlackMode, VERSION,
)
from lowrank_ope.estimation import (
        DiscrepancyConfig, operator_discrepancy, policy_operator_discrepancy, SolverConfig,
        SolverError,
)
from lowrank_ope.experiment import (
        check_results, DESCRIPTIONS, ExperimentConfig, ExperimentKind, run_experiment,
)
from lowrank_ope.logger import DiagnosticsPrinter, ResultCsvLogger, ResultPrinter
from lowrank_ope.mdp import load_mdp, random_low_rank_mdp, save_mdp
from lowrank_ope.offline_data import (
        empirical_initial_distribution, load_dataset, sample_trajectories, save_dataset,
)
from lowrank_ope.ope import (
        bound_finite, bound_infinite, evaluate_policy_finite, evaluate_policy_infinite, OPERun,
        SlackConfig,
)
from lowrank_ope.policy_opt import (
        build_candidate_set, OptimizationError, optimize_policy, suboptimality_bound,
)

# Failures reported as a logged error and exit status 1.
DOMAIN_ERRORS = (InvalidArgumentError, OffSupportError, ConsistencyError, SolverError,
                 OptimizationError)


def load_policy(path: str) -> Policy:
    with open(path) as f:
        return Policy.from_json_dict(json.load(f))


def save_policy(policy: Policy, path: str) -> None:
    with open(path, "w") as f:
        json.dump(policy.to_json_dict(), f)


def write_json(data: Dict[str, Any], path: Optional[str]) -> None:
    text = json.dumps(data, indent=2)
    if path is None:
        print(text)
    else:
        with open(path, "w") as f:
            f.write(text + "\n")


def solver_config(args: argparse.Namespace) -> SolverConfig:
    return SolverConfig(
            tolerance=args.me_tol,
            max_iters=args.me_max_iters,
            restarts=args.me_restarts,
            factor_rank=args.me_factor_rank,
            bisect_tol=args.me_bisect_tol)


def add_solver_flags(parser: argparse.ArgumentParser) -> None:
    defaults = SolverConfig()
    parser.add_argument("--me-tol", type=float, default=defaults.tolerance,
                        help="allowed constraint violation of each estimate")
    parser.add_argument("--me-max-iters", type=int, default=defaults.max_iters)
    parser.add_argument("--me-restarts", type=int, default=defaults.restarts)
    parser.add_argument("--me-factor-rank", type=int, default=defaults.factor_rank,
                        help="factor columns; 0 means min(S, A)")
    parser.add_argument("--me-bisect-tol", type=float, default=defaults.bisect_tol,
                        help="max-norm bisection tolerance; 0 means 1e-4 * L_t")


def run_summary(run: OPERun) -> Dict[str, Any]:
    return {
        "mode": run.mode.value,
        "estimate": run.estimate,
        "diagnostics": [step._asdict() for step in run.diagnostics],
    }


def cmd_generate(args: argparse.Namespace) -> None:
    mdp = random_low_rank_mdp(args.states, args.actions, args.horizon, args.rank, args.seed,
                              FactorizationForm(args.form))
    save_mdp(mdp, args.out)
    logging.info("wrote %s MDP to %s", args.form, args.out)


def cmd_policy(args: argparse.Namespace) -> None:
    if args.kind == "uniform":
        policy = Policy.uniform(args.states, args.actions, args.horizon)
    else:
        policy = Policy.random_support(args.states, args.actions, args.horizon,
                                       args.support_size, np.random.default_rng(args.seed))
    save_policy(policy, args.out)


def cmd_sample(args: argparse.Namespace) -> None:
    dataset = sample_trajectories(load_mdp(args.mdp), load_policy(args.behavior),
                                  args.trajectories, args.seed, workers=args.workers)
    save_dataset(dataset, args.out)
    logging.info("wrote %d trajectories to %s", dataset.num_trajectories, args.out)


def cmd_evaluate(args: argparse.Namespace) -> None:
    mdp = load_mdp(args.mdp) if args.mdp else None
    target = load_policy(args.target)
    behavior = load_policy(args.behavior) if args.behavior else None
    config = solver_config(args)
    dataset = None
    if args.mode == EvaluationMode.INFINITE_SAMPLE.value:
        if mdp is None or behavior is None:
            raise InvalidArgumentError("infinite mode needs --mdp and --behavior")
        run = evaluate_policy_infinite(mdp, behavior, target, config)
    else:
        if not args.dataset:
            raise InvalidArgumentError("finite mode needs --dataset")
        dataset = load_dataset(args.dataset)
        mu1 = mdp.initial_dist if mdp is not None else empirical_initial_distribution(dataset)
        slack = SlackConfig(SlackMode(args.slack), args.slack_scale, args.delta)
        run = evaluate_policy_finite(dataset, target, mu1, config, slack, mdp=mdp,
                                     rank_param=args.rank)
    DiagnosticsPrinter().output_run(run)

    output = run_summary(run)
    if mdp is not None and behavior is not None:
        total, per_step = bound_infinite(mdp, behavior, target)
        output["bound_infinite"] = {"total": total, "per_step": per_step}
        if dataset is not None:
            finite = bound_finite(
                    mdp, behavior, target, dataset.num_trajectories, args.delta, args.constant)
            output["bound_finite"] = finite._asdict()
    if args.out:
        write_json(output, args.out)


def cmd_optimize(args: argparse.Namespace) -> None:
    dataset = load_dataset(args.dataset)
    behavior = load_policy(args.behavior)
    budgets = [float(b) for b in args.budget.split(",")]
    mdp = load_mdp(args.mdp) if args.mdp else None
    rank_param = mdp.rank_param if mdp is not None else args.rank
    if rank_param is None:
        raise InvalidArgumentError("--rank is required without --mdp")
    candidates = build_candidate_set(behavior, budgets, rank_param, args.n_candidates, args.seed,
                                     scale=args.scale)
    mu1 = mdp.initial_dist if mdp is not None else empirical_initial_distribution(dataset)
    slack = SlackConfig(SlackMode(args.slack), args.slack_scale, args.delta)
    result = optimize_policy(dataset, candidates, mu1, solver_config(args), slack, mdp=mdp,
                             workers=args.workers)
    write_json({
        "selected": result.best_index,
        "policy": result.best.to_json_dict(),
        "estimates": result.estimates,
        "num_candidates": len(candidates.policies),
        "bound": suboptimality_bound(candidates, dataset.num_trajectories, args.delta,
                                     args.constant),
    }, args.out)


def cmd_discrepancy(args: argparse.Namespace) -> None:
    with open(args.p) as f:
        p = np.asarray(json.load(f), dtype=float)
    with open(args.q) as f:
        q = np.asarray(json.load(f), dtype=float)
    config = DiscrepancyConfig(seed=args.seed)
    if args.policy:
        result = policy_operator_discrepancy(p, q, config)
    else:
        result = operator_discrepancy(p, q, config)
    write_json({
        "value": result.value,
        "minimizer": result.minimizer.tolist(),
        "certificate_gap": result.certificate_gap,
        "iterations": result.iterations,
        "converged": result.converged,
    }, args.out)


def cmd_experiment(args: argparse.Namespace) -> None:
    if args.list:
        for kind in ExperimentKind:
            print("{:18} {}".format(kind.value, DESCRIPTIONS[kind]))
        return
    if not args.config:
        raise InvalidArgumentError("--config is required")
    config = ExperimentConfig.from_json(args.config)
    if args.workers:
        config = config._replace(workers=args.workers)
    out = args.out or config.output
    if not out:
        raise InvalidArgumentError("--out is required when the config names no output")

    result = run_experiment(config)
    csv_logger = ResultCsvLogger(out, config.config_hash(), result.constant)
    csv_logger.setup()
    try:
        csv_logger.output_rows(result.rows)
        csv_logger.output_rows(result.aggregates, force=True)
    finally:
        csv_logger.off()
    ResultPrinter().output_rows(result.aggregates)
    logging.info("wrote %d rows to %s", len(result.rows) + len(result.aggregates), out)

    if args.check:
        violations = check_results(config.kind.value, result.rows, config.delta,
                                   config.solver.tolerance)
        for violation in violations:
            logging.error("invariant violated: %s", violation)
        if violations:
            sys.exit(1)
        logging.info("all invariants hold")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
            prog="lowrank-ope",
            description="Offline policy evaluation and improvement for low-rank tabular MDPs.")
    parser.add_argument("--version", action="version", version=VERSION)
    parser.add_argument("--verbose", action="store_true", help="log solver progress")
    commands = parser.add_subparsers(dest="command", required=True)

    generate = commands.add_parser("generate", help="write a random low-rank MDP")
    generate.add_argument("--states", type=int, required=True)
    generate.add_argument("--actions", type=int, required=True)
    generate.add_argument("--horizon", type=int, required=True)
    generate.add_argument("--rank", type=int, required=True)
    generate.add_argument("--seed", type=int, default=0)
    generate.add_argument("--form", choices=[f.value for f in FactorizationForm],
                          default=FactorizationForm.FORM_I.value)
    generate.add_argument("--out", required=True)
    generate.set_defaults(func=cmd_generate)

    policy = commands.add_parser("policy", help="write a uniform or random-support policy")
    policy.add_argument("--states", type=int, required=True)
    policy.add_argument("--actions", type=int, required=True)
    policy.add_argument("--horizon", type=int, required=True)
    policy.add_argument("--kind", choices=["uniform", "random-support"], default="uniform")
    policy.add_argument("--support-size", type=int, default=1)
    policy.add_argument("--seed", type=int, default=0)
    policy.add_argument("--out", required=True)
    policy.set_defaults(func=cmd_policy)

    sample = commands.add_parser("sample", help="sample behavior trajectories")
    sample.add_argument("--mdp", required=True)
    sample.add_argument("--behavior", required=True)
    sample.add_argument("--trajectories", type=int, required=True)
    sample.add_argument("--seed", type=int, default=0)
    sample.add_argument("--workers", type=int, default=1)
    sample.add_argument("--out", required=True, help="JSON header path; the CSV goes next to it")
    sample.set_defaults(func=cmd_sample)

    evaluate = commands.add_parser("evaluate", help="estimate the return of a target policy")
    evaluate.add_argument("--mode", choices=[m.value for m in EvaluationMode], required=True)
    evaluate.add_argument("--mdp")
    evaluate.add_argument("--dataset")
    evaluate.add_argument("--behavior")
    evaluate.add_argument("--target", required=True)
    evaluate.add_argument("--rank", type=int, help="rank parameter d when no MDP is given")
    evaluate.add_argument("--slack", choices=[m.value for m in SlackMode],
                          default=SlackMode.PLUGIN.value)
    evaluate.add_argument("--slack-scale", type=float, default=1.0)
    evaluate.add_argument("--delta", type=float, default=0.05)
    evaluate.add_argument("--constant", type=float, default=1.0,
                          help="constant C of the finite-sample bound")
    evaluate.add_argument("--out")
    add_solver_flags(evaluate)
    evaluate.set_defaults(func=cmd_evaluate)

    optimize = commands.add_parser("optimize", help="pick the best policy near the behavior")
    optimize.add_argument("--dataset", required=True)
    optimize.add_argument("--behavior", required=True)
    optimize.add_argument("--budget", required=True, help="comma-separated B_1,...,B_H")
    optimize.add_argument("--n-candidates", type=int, default=10)
    optimize.add_argument("--scale", type=float, default=0.5,
                          help="median perturbation as a fraction of the budget")
    optimize.add_argument("--seed", type=int, default=0)
    optimize.add_argument("--mdp")
    optimize.add_argument("--rank", type=int)
    optimize.add_argument("--slack", choices=[m.value for m in SlackMode],
                          default=SlackMode.PLUGIN.value)
    optimize.add_argument("--slack-scale", type=float, default=1.0)
    optimize.add_argument("--delta", type=float, default=0.05)
    optimize.add_argument("--constant", type=float, default=1.0)
    optimize.add_argument("--workers", type=int, default=1)
    optimize.add_argument("--out")
    add_solver_flags(optimize)
    optimize.set_defaults(func=cmd_optimize)

    discrepancy = commands.add_parser("discrepancy", help="operator discrepancy of p and q")
    discrepancy.add_argument("p", help="JSON S x A matrix")
    discrepancy.add_argument("q", help="JSON S x A matrix")
    discrepancy.add_argument("--policy", action="store_true",
                             help="treat inputs as row-stochastic policies")
    discrepancy.add_argument("--seed", type=int, default=0)
    discrepancy.add_argument("--out")
    discrepancy.set_defaults(func=cmd_discrepancy)

    experiment = commands.add_parser("experiment", help="run a seeded experiment grid")
    experiment.add_argument("--config")
    experiment.add_argument("--out")
    experiment.add_argument("--list", action="store_true", help="list experiment kinds")
    experiment.add_argument("--check", action="store_true",
                            help="exit nonzero when an invariant is violated")
    experiment.add_argument("--workers", type=int, default=0)
    experiment.set_defaults(func=cmd_experiment)
    return parser


def main(argv: Optional[List[str]] = None) -> None:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO)
    try:
        args.func(args)
    except DOMAIN_ERRORS as e:
        logging.exception(e)
        sys.exit(1)


if __name__ == '__main__':
    main()
