import logging
from typing import NamedTuple, Tuple

import numpy as np

# Relative singular value cutoff for the numerical rank.
RANK_TOLERANCE = 1e-10
# Rounds of the row/column reweighting search over factorizations.
FACTOR_SEARCH_ROUNDS = 20


class MaxNormBound(NamedTuple):
    """A certified bracket lower <= ||M||_max <= upper."""
    lower: float
    upper: float


def operator_norm(m: np.ndarray) -> float:
    """The largest singular value."""
    if m.size == 0:
        return 0.0
    return float(np.linalg.norm(m, 2))


def nuclear_norm(m: np.ndarray) -> float:
    """The sum of singular values."""
    if m.size == 0:
        return 0.0
    return float(np.linalg.norm(m, "nuc"))


def numerical_rank(m: np.ndarray, tolerance: float = RANK_TOLERANCE) -> int:
    sigma = np.linalg.svd(m, compute_uv=False)
    if sigma.size == 0 or sigma[0] == 0:
        return 0
    return int(np.sum(sigma > tolerance * sigma[0]))


def two_to_inf_norm(factor: np.ndarray) -> float:
    """The largest row l2 norm."""
    if factor.size == 0:
        return 0.0
    return float(np.max(np.linalg.norm(factor, axis=1)))


def factorization_value(left: np.ndarray, right: np.ndarray) -> float:
    """||L||_{2->inf} ||R||_{2->inf}, an upper bound on ||L R^T||_max."""
    return two_to_inf_norm(left) * two_to_inf_norm(right)


def svd_factors(m: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """The balanced factorization M = (U sqrt(S)) (V sqrt(S))^T."""
    u, sigma, vt = np.linalg.svd(m, full_matrices=False)
    root = np.sqrt(sigma)
    return u * root, vt.T * root


def _reweighted_factor_search(m: np.ndarray, rounds: int) -> float:
    """Best factorization value over SVDs of diagonally rescaled copies of M.

    Every candidate is an exact factorization of M, so the result is always a
    valid upper bound; the reweighting only steers which one is found.
    """
    row_scale = np.ones(m.shape[0])
    col_scale = np.ones(m.shape[1])
    best = np.inf
    for _ in range(rounds):
        left, right = svd_factors(row_scale[:, None] * m * col_scale[None, :])
        left = left / row_scale[:, None]
        right = right / col_scale[:, None]
        best = min(best, factorization_value(left, right))

        # Push weight onto heavy rows so their unscaled factor rows shrink.
        for scale, factor in ((row_scale, left), (col_scale, right)):
            norms = np.linalg.norm(factor, axis=1)
            active = norms > 0
            if np.any(active):
                ratio = norms[active] / np.mean(norms[active])
                scale[active] *= np.clip(np.sqrt(ratio), 0.5, 2.0)
    return float(best)


def max_norm_bound(m: np.ndarray, rank_hint: int = 0) -> MaxNormBound:
    """Brackets ||M||_max between ||M||_* / sqrt(nm) and the best of three upper bounds.

    The upper bound is the smallest of sqrt(rank) ||M||_inf, ||M||_*, and the
    value of the best factorization found by a short reweighting search.
    The numerical rank drives the sqrt(rank) bound; rank_hint is the rank the caller
    expects, and exceeding it is logged.
    """
    if m.size == 0 or not np.any(m):
        return MaxNormBound(0.0, 0.0)
    n, k = m.shape
    nuclear = nuclear_norm(m)
    rank = numerical_rank(m)
    if 0 < rank_hint < rank:
        logging.debug("matrix has numerical rank %d above the expected %d", rank, rank_hint)
    lower = nuclear / np.sqrt(n * k)
    upper = min(np.sqrt(rank) * float(np.max(np.abs(m))), nuclear,
                _reweighted_factor_search(m, FACTOR_SEARCH_ROUNDS))
    return MaxNormBound(float(lower), float(upper))


def matrix_difference_slack(a: np.ndarray, b: np.ndarray, p: np.ndarray, w: np.ndarray) -> float:
    """Slack of |sum W o (A-B)| <= |sum P o (A-B)| + (||A||_* + ||B||_*) ||P - W||_op.

    The inequality is the Hoelder-duality step of the evaluation error analysis;
    a nonnegative result means it holds.
    """
    diff = a - b
    lhs = abs(float(np.sum(w * diff)))
    rhs = abs(float(np.sum(p * diff))) + (nuclear_norm(a) + nuclear_norm(b)) * operator_norm(p - w)
    return rhs - lhs
