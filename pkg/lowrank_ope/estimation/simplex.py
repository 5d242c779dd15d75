"""Euclidean projections onto (support-restricted) probability simplices."""
from abc import ABC, abstractmethod

import numpy as np

from lowrank_ope.common import InvalidArgumentError


def project_simplex(v: np.ndarray, radius: float = 1.0) -> np.ndarray:
    """Euclidean projection of a vector onto {w : sum w = radius, w >= 0}.

    Sort-based algorithm of Duchi et al. (2008), O(n log n).
    """
    assert radius > 0, "radius must be strictly positive ({} <= 0)".format(radius)
    n, = v.shape
    if v.sum() == radius and np.all(v >= 0):
        return v.copy()
    u = np.sort(v)[::-1]
    cssv = np.cumsum(u)
    # Number of positive components of the projection.
    rho = np.nonzero(u * np.arange(1, n + 1) > (cssv - radius))[0][-1]
    theta = (cssv[rho] - radius) / (rho + 1.0)
    return np.maximum(v - theta, 0)


class FeasibleSet(ABC):
    """A polytope of nonnegative S x A matrices with a support constraint."""

    def __init__(self, mask: np.ndarray) -> None:
        self.mask = np.asarray(mask, dtype=bool)

    @abstractmethod
    def project(self, x: np.ndarray) -> np.ndarray:
        pass

    @abstractmethod
    def linear_min(self, w: np.ndarray) -> float:
        """min over the set of <w, g>."""
        pass

    @abstractmethod
    def random_point(self, rng: np.random.Generator) -> np.ndarray:
        pass

    @abstractmethod
    def restrict(self, q: np.ndarray) -> np.ndarray:
        """Masks q onto the support and renormalizes (uniform where no mass is left)."""
        pass


class SupportSimplex(FeasibleSet):
    """Distributions over S x A supported inside a mask."""

    def __init__(self, mask: np.ndarray) -> None:
        super(SupportSimplex, self).__init__(mask)
        if not np.any(self.mask):
            raise InvalidArgumentError("support must be nonempty")

    def project(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros_like(x)
        out[self.mask] = project_simplex(x[self.mask])
        return out

    def linear_min(self, w: np.ndarray) -> float:
        return float(np.min(w[self.mask]))

    def random_point(self, rng: np.random.Generator) -> np.ndarray:
        out = np.zeros(self.mask.shape)
        out[self.mask] = rng.dirichlet(np.ones(int(self.mask.sum())))
        return out

    def restrict(self, q: np.ndarray) -> np.ndarray:
        out = np.where(self.mask, q, 0.0)
        total = out.sum()
        if total <= 0:
            return self.mask / self.mask.sum()
        return out / total


class RowSupportSimplex(FeasibleSet):
    """Row-stochastic matrices whose row s is supported inside mask[s]."""

    def __init__(self, mask: np.ndarray) -> None:
        super(RowSupportSimplex, self).__init__(mask)
        if not np.all(np.any(self.mask, axis=1)):
            raise InvalidArgumentError("every row of the support must be nonempty")

    def project(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros_like(x)
        for s, row_mask in enumerate(self.mask):
            out[s, row_mask] = project_simplex(x[s, row_mask])
        return out

    def linear_min(self, w: np.ndarray) -> float:
        return float(sum(np.min(w[s, row_mask]) for s, row_mask in enumerate(self.mask)))

    def random_point(self, rng: np.random.Generator) -> np.ndarray:
        out = np.zeros(self.mask.shape)
        for s, row_mask in enumerate(self.mask):
            out[s, row_mask] = rng.dirichlet(np.ones(int(row_mask.sum())))
        return out

    def restrict(self, q: np.ndarray) -> np.ndarray:
        out = np.where(self.mask, q, 0.0)
        totals = out.sum(axis=1, keepdims=True)
        uniform = self.mask / self.mask.sum(axis=1, keepdims=True)
        return np.where(totals > 0, out / np.where(totals > 0, totals, 1.0), uniform)
