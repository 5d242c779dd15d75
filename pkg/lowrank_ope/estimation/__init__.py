from .discrepancy import (
        concentrability_coefficient, DiscrepancyConfig, DiscrepancyResult,
        empirical_operator_discrepancy, operator_discrepancy, policy_operator_discrepancy,
)
from .matrix_estimation import (
        constraint_residual, MEProblem, MESolution, solve_me, SolverConfig, SolverError,
)
from .norms import (
        matrix_difference_slack, max_norm_bound, MaxNormBound, nuclear_norm, operator_norm,
)
from .simplex import project_simplex, RowSupportSimplex, SupportSimplex
