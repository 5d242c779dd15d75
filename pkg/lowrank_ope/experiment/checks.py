"""Invariant checks over experiment results, used by `experiment --check`."""
import logging
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

# Percentile of the normalized excess error that fixes the constant C.
CALIBRATION_PERCENTILE = 95.0
# Allowed slope deviation for the error-vs-K rate.
RATE_SLOPE_TOLERANCE = 0.15
# Allowed slope deviation for the discrepancy-vs-m rate.
SUPPORT_SLOPE_TOLERANCE = 0.2
# Error allowed when both policies cover every action.
FULL_SUPPORT_TOLERANCE = 1e-6
# Numerical slack on deterministic bound comparisons.
BOUND_TOLERANCE = 1e-6


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of log y against log x."""
    return float(np.polyfit(np.log(np.asarray(x, dtype=float)),
                            np.log(np.asarray(y, dtype=float)), 1)[0])


def calibrate_constant(measured: Sequence[float], shift: Sequence[float],
                       shape: Sequence[float]) -> float:
    """The 95th percentile of max(0, measured - shift) / shape over runs with shape > 0."""
    ratios = [max(0.0, e - s) / w for e, s, w in zip(measured, shift, shape) if w > 0]
    if not ratios:
        return 0.0
    return float(np.percentile(ratios, CALIBRATION_PERCENTILE))


def allowed_violations(num_runs: int, delta: float) -> int:
    """n delta plus three binomial standard deviations, rounded down."""
    return int(num_runs * delta + 3 * np.sqrt(num_runs * delta * (1 - delta)))


def _group(rows: Sequence[Any], *fields: str) -> Dict[Tuple, List[Any]]:
    groups: Dict[Tuple, List[Any]] = {}
    for row in rows:
        groups.setdefault(tuple(getattr(row, f) for f in fields), []).append(row)
    return groups


def _check_bounds(rows: Sequence[Any], delta: float, solver_tol: float) -> List[str]:
    violations = []
    infinite = [r for r in rows if r.mode == "infinite" and r.bound_inf is not None]
    for r in infinite:
        if r.measured_error > r.bound_inf + 10 * solver_tol * r.H:
            violations.append("seed {} (n={} m={} H={}): error {:.6g} above bound_inf {:.6g}"
                              .format(r.seed, r.n, r.m, r.H, r.measured_error, r.bound_inf))
    finite = [r for r in rows if r.mode == "finite"]
    if finite:
        exceeded = sum(r.measured_error > r.bound_fin for r in finite)
        allowed = allowed_violations(len(finite), delta)
        if exceeded > allowed:
            violations.append("{} of {} finite-sample runs exceed bound_fin (allowed {})"
                              .format(exceeded, len(finite), allowed))
    return violations


def _check_disjoint(rows: Sequence[Any]) -> List[str]:
    violations = []
    for r in rows:
        if r.mode == "infinite" and r.m == r.n and r.measured_error > FULL_SUPPORT_TOLERANCE:
            violations.append("seed {} n={}: full-support error {:.6g}"
                              .format(r.seed, r.n, r.measured_error))
    for key, group in _group(rows, "n", "H", "d", "K", "mode").items():
        by_m = _group(group, "m")
        ms = sorted(m for (m,) in by_m)
        medians = [float(np.median([r.measured_error for r in by_m[(m,)]])) for m in ms]
        if key[-1] == "infinite" and any(b > a + BOUND_TOLERANCE
                                         for a, b in zip(medians, medians[1:])):
            violations.append("median error increases with m at n={} H={}: {}"
                              .format(key[0], key[1], medians))
        partial = [(m, float(np.median([r.emp_dis for r in by_m[(m,)]]))) for m in ms
                   if m < key[0]]
        partial = [(m, v) for m, v in partial if v > 0]
        if len(partial) >= 3:
            slope = loglog_slope([m for m, _ in partial], [v for _, v in partial])
            if abs(slope + 0.5) > SUPPORT_SLOPE_TOLERANCE:
                violations.append("discrepancy slope in m is {:.3f} at n={} H={}"
                                  .format(slope, key[0], key[1]))
    return violations


def _check_bandit(rows: Sequence[Any], solver_tol: float) -> List[str]:
    violations = []
    for r in rows:
        if r.mode == "infinite" and r.measured_error > r.bound_inf + 10 * solver_tol:
            violations.append("seed {}: error {:.6g} above distribution bound {:.6g}"
                              .format(r.seed, r.measured_error, r.bound_inf))
        if r.bound_inf > r.policy_bound + BOUND_TOLERANCE:
            violations.append("seed {}: distribution bound {:.6g} above policy bound {:.6g}"
                              .format(r.seed, r.bound_inf, r.policy_bound))
    return violations


def _check_rate(rows: Sequence[Any]) -> List[str]:
    violations = []
    for key, group in _group(rows, "n", "m", "H", "d").items():
        by_k = _group(group, "K")
        ks = sorted(k for (k,) in by_k)
        if len(ks) < 2:
            continue
        medians = [float(np.median([r.measured_error for r in by_k[(k,)]])) for k in ks]
        if min(medians) <= 0:
            violations.append("zero median error at n={}; slope undefined".format(key[0]))
            continue
        slope = loglog_slope(ks, medians)
        logging.info("error-vs-K slope %.3f at n=%d H=%d", slope, key[0], key[2])
        if abs(slope + 0.5) > RATE_SLOPE_TOLERANCE:
            violations.append("error-vs-K slope {:.3f} at n={} H={}".format(slope, key[0], key[2]))
    return violations


def _check_policy_opt(rows: Sequence[Any], delta: float) -> List[str]:
    exceeded = sum(r.measured_error > r.policy_bound for r in rows)
    allowed = allowed_violations(len(rows), delta)
    if exceeded > allowed:
        return ["{} of {} runs exceed the suboptimality bound (allowed {})"
                .format(exceeded, len(rows), allowed)]
    return []


def check_results(kind: str, rows: Sequence[Any], delta: float,
                  solver_tol: float) -> List[str]:
    """Lists every violated invariant of an experiment's per-seed rows."""
    if kind == "bound_check":
        return _check_bounds(rows, delta, solver_tol)
    elif kind == "disjoint_support":
        return _check_disjoint(rows) + _check_bounds(rows, delta, solver_tol)
    elif kind == "bandit":
        return _check_bandit(rows, solver_tol)
    elif kind == "rate_check":
        return _check_rate(rows)
    else:
        assert kind == "policy_opt_demo", "unknown experiment kind {}".format(kind)
        return _check_policy_opt(rows, delta)
