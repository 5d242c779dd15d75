from .checks import allowed_violations, calibrate_constant, check_results, loglog_slope
from .config import Cell, DESCRIPTIONS, ExperimentConfig, ExperimentKind
from .runners import (
        aggregate_rows, ExperimentResult, ResultRow, run_bandit, run_bound_check,
        run_disjoint_support, run_experiment, run_policy_opt_demo, run_rate_check,
)
