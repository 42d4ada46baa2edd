"""
Projected gradient ascent over perturbation balls.
"""
import logging
from typing import Callable, Optional, Tuple

import numpy as np

from deferkit.attacks.ball import AttackPlan, PerturbationBall, project, random_in_ball
from deferkit.diffcore import tensor as T
from deferkit.errors import NonFiniteError

logger = logging.getLogger(__name__)

Objective = Callable[[T.Node], T.Node]


def _tick(counter, kind: str, phase: str, rows: int) -> None:
    if counter is not None:
        counter.tick(kind, phase, rows)


def _direction(grad: np.ndarray, ball: PerturbationBall) -> np.ndarray:
    if ball.is_inf:
        return np.sign(grad)
    norms = np.sqrt(np.sum(grad ** 2, axis=1, keepdims=True))
    return np.where(norms > 0, grad / np.where(norms > 0, norms, 1.0), 0.0)


def pgd_ascend(objective: Objective,
               x: np.ndarray,
               ball: PerturbationBall,
               plan: AttackPlan,
               maximize: bool = True,
               track_best: bool = True,
               counter=None,
               phase: str = "pgd") -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """
    Run projected gradient ascent (or descent) on a row-wise objective.

    Args:
        objective (Callable[[Node], Node]): Maps a batch (n, d) to per-row values (n,)
        x (ndarray): Ball centers, (n, d) or a single (d,)
        ball (PerturbationBall): Feasible set around each center
        plan (AttackPlan): Steps, step size, initialization, restarts and seed
        maximize (bool): Ascend when True, descend otherwise
        track_best (bool): Return the best evaluated iterate over all runs. When
            False only the first run is made and its last iterate is returned
            without a final evaluation.
        counter: Optional pass counter with a ``tick(kind, phase, rows)`` method
        phase (str): Label used for the counter

    Returns:
        Tuple[ndarray, Optional[ndarray]]: Points with the shape of ``x`` and their
        objective values (None when ``track_best`` is False)
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    centers = np.atleast_2d(x)
    n = centers.shape[0]
    step = plan.resolved_step_size(ball.gamma)
    rng = np.random.default_rng(plan.seed)
    sign = 1.0 if maximize else -1.0

    inits = [plan.init] + (["random_uniform"] * plan.restarts if track_best else [])
    best_points = centers.copy()
    best_values = None
    last = centers.copy()

    def _keep(points: np.ndarray, values: np.ndarray) -> None:
        nonlocal best_points, best_values
        if best_values is None:
            best_points, best_values = points.copy(), values.copy()
            return
        better = sign * values > sign * best_values
        best_points = np.where(better[:, None], points, best_points)
        best_values = np.where(better, values, best_values)

    for run, init in enumerate(inits):
        z = centers.copy() if init == "center" else random_in_ball(centers, ball, rng)
        z = project(z, centers, ball)
        for t in range(plan.steps):
            z_node = T.variable(z)
            values = objective(z_node)
            _tick(counter, "forward", f"{phase}_forward", n)
            if not np.all(np.isfinite(values.value)):
                logger.error(f"Non-finite objective during {phase} at iteration {t} (run {run})")
                raise NonFiniteError("objective is not finite during ascent", iteration=t)
            if track_best:
                _keep(z, values.value)
            T.backward(T.sum_(values))
            _tick(counter, "backward", f"{phase}_backward", n)
            grad = np.zeros_like(z) if z_node.grad is None else z_node.grad
            if not np.all(np.isfinite(grad)):
                logger.error(f"Non-finite gradient during {phase} at iteration {t} (run {run})")
                raise NonFiniteError("gradient is not finite during ascent", iteration=t)
            z = project(z + sign * step * _direction(grad, ball), centers, ball)
        if track_best:
            final = objective(T.constant(z)).value
            _tick(counter, "forward", f"{phase}_forward", n)
            if not np.all(np.isfinite(final)):
                raise NonFiniteError("objective is not finite during ascent", iteration=plan.steps)
            _keep(z, final)
        else:
            last = z

    if not track_best:
        return (last[0] if single else last), None
    return (best_points[0] if single else best_points), (best_values[0] if single else best_values)
