"""
Finite instances with known conditional costs and their Bayes risks.
"""
import logging
from typing import Sequence, Tuple, Union

import numpy as np

from deferkit.errors import ContractViolation

logger = logging.getLogger(__name__)


class DiscreteInstance:
    """Finitely many inputs, each with a conditional mean cost per action."""

    def __init__(self, points: Sequence[Sequence[float]], cond_costs: Sequence[Sequence[float]]):
        """
        Initialize the instance.

        Args:
            points (Sequence): P inputs of equal dimension
            cond_costs (Sequence): (P, |A|) nonnegative finite conditional costs
        """
        self.points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        self.cond_costs = np.atleast_2d(np.asarray(cond_costs, dtype=np.float64))
        if self.points.shape[0] != self.cond_costs.shape[0]:
            raise ContractViolation(f"{self.points.shape[0]} points but {self.cond_costs.shape[0]} cost vectors")
        if not np.all(np.isfinite(self.cond_costs)) or np.any(self.cond_costs < 0):
            raise ContractViolation("conditional costs must be finite and nonnegative")

    @property
    def action_count(self) -> int:
        return int(self.cond_costs.shape[1])

    def index_of(self, point: Union[int, Sequence[float]]) -> int:
        if isinstance(point, (int, np.integer)):
            if not 0 <= point < self.points.shape[0]:
                raise ContractViolation(f"point index {point} outside the instance")
            return int(point)
        target = np.asarray(point, dtype=np.float64).ravel()
        matches = np.flatnonzero(np.all(np.isclose(self.points, target[None, :], atol=1e-12), axis=1))
        if matches.size == 0:
            raise ContractViolation(f"point {target.tolist()} is not in the instance")
        return int(matches[0])

    @classmethod
    def random(cls, rng: np.random.Generator, num_points: int, action_count: int, dim: int = 1) -> "DiscreteInstance":
        """Uniform points in [-1, 1]^dim and uniform costs in [0, 1]."""
        points = rng.uniform(-1.0, 1.0, size=(num_points, dim))
        return cls(points, rng.uniform(0.0, 1.0, size=(num_points, action_count)))


def bayes_conditional_risk(inst: DiscreteInstance, point: Union[int, Sequence[float]]) -> Tuple[float, int]:
    """
    Best achievable conditional risk at one point: min_j cost_j and its argmin.

    Ties go to the lowest action index.
    """
    costs = inst.cond_costs[inst.index_of(point)]
    best = int(np.argmin(costs))
    return float(costs[best]), best
