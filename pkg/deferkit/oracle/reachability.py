"""
Exact reachable and disagreement sets on dense grids of low-dimensional balls.
"""
import itertools
import logging
from typing import Callable, List

import numpy as np
from pydantic import BaseModel, Field

from deferkit.errors import UnsupportedDimensionError

logger = logging.getLogger(__name__)

ScoresFn = Callable[[np.ndarray], np.ndarray]

DEFAULT_RESOLUTION = 1001


class OutcomeSet(BaseModel):
    """Outcomes found on the grid, with the grid that found them."""
    outcomes: List[int]
    resolution: int = Field(..., description="Grid points per axis")
    points_evaluated: int


def ball_grid(x: np.ndarray, ball, grid_resolution: int = DEFAULT_RESOLUTION) -> np.ndarray:
    """The center plus every grid point of [-gamma, gamma]^d that lies in the ball (and its box)."""
    x = np.asarray(x, dtype=np.float64).ravel()
    d = x.size
    if d > 2:
        raise UnsupportedDimensionError(f"exact enumeration supports inputs of dimension <= 2, got {d}")
    if ball.gamma == 0 or grid_resolution < 1:
        offsets = np.zeros((1, d))
    else:
        axis = np.linspace(-ball.gamma, ball.gamma, grid_resolution)
        offsets = np.array(list(itertools.product(axis, repeat=d))) if d == 2 else axis[:, None]
        if not ball.is_inf:
            offsets = offsets[np.sqrt(np.sum(offsets ** 2, axis=1)) <= ball.gamma * (1 + 1e-12)]
        offsets = np.vstack([np.zeros((1, d)), offsets])
    points = x[None, :] + offsets
    if ball.box is not None and ball.gamma > 0:
        points = np.clip(points, ball.box[0], ball.box[1])
    return points


def grid_decisions(policy_scores_fn: ScoresFn, x: np.ndarray, ball,
                   grid_resolution: int = DEFAULT_RESOLUTION) -> np.ndarray:
    """argmax decision (lowest index on ties) at every grid point."""
    points = ball_grid(x, ball, grid_resolution)
    scores = np.atleast_2d(np.asarray(policy_scores_fn(points), dtype=np.float64))
    return np.argmax(scores, axis=1)


def exact_reachability(policy_scores_fn: ScoresFn, x: np.ndarray, ball,
                       grid_resolution: int = DEFAULT_RESOLUTION) -> OutcomeSet:
    """
    Outcomes decided somewhere on a dense grid of the ball around ``x``.

    Args:
        policy_scores_fn (Callable): Maps an (n, d) batch to (n, |A|) scores; a ScoreModel works
        x (ndarray): Center, dimension 1 or 2
        ball (PerturbationBall): Radius, norm and optional box
        grid_resolution (int): Points per axis

    Returns:
        OutcomeSet: Sorted outcome indices, the resolution and the number of grid points
    """
    decisions = grid_decisions(policy_scores_fn, x, ball, grid_resolution)
    return OutcomeSet(outcomes=sorted(int(j) for j in np.unique(decisions)),
                      resolution=grid_resolution, points_evaluated=int(decisions.size))


def exact_disagreement(policy_scores_fn: ScoresFn, x: np.ndarray, ball, action_count: int,
                       grid_resolution: int = DEFAULT_RESOLUTION) -> OutcomeSet:
    """Outcomes j for which some grid point of the ball is decided as something other than j."""
    decisions = grid_decisions(policy_scores_fn, x, ball, grid_resolution)
    outcomes = [j for j in range(action_count) if np.any(decisions != j)]
    return OutcomeSet(outcomes=outcomes, resolution=grid_resolution, points_evaluated=int(decisions.size))
