"""
Central finite-difference check of analytic gradients.
"""
import logging
from typing import Callable

import numpy as np

from deferkit.diffcore import tensor as T
from deferkit.errors import ContractViolation, NonFiniteError

logger = logging.getLogger(__name__)


def finite_diff_check(scalar_fn: Callable[[T.Node], T.Node],
                      point: np.ndarray,
                      step: float = 1e-5) -> float:
    """
    Compare the backward-pass gradient of ``scalar_fn`` with central differences.

    Args:
        scalar_fn (Callable[[Node], Node]): Builds a scalar loss from an input node
        point (ndarray): Where to differentiate
        step (float): Finite-difference step, must be positive

    Returns:
        float: max over coordinates of |analytic - numeric| / max(1, |analytic|)
    """
    if step <= 0:
        raise ContractViolation(f"step must be positive, got {step}")
    point = np.asarray(point, dtype=np.float64)

    x = T.variable(point.copy())
    loss = scalar_fn(x)
    if not np.all(np.isfinite(loss.value)):
        raise NonFiniteError("loss is not finite at the base point")
    T.backward(loss)
    analytic = np.zeros_like(point) if x.grad is None else x.grad.copy()
    if not np.all(np.isfinite(analytic)):
        bad = int(np.flatnonzero(~np.isfinite(analytic.ravel()))[0])
        raise NonFiniteError("analytic gradient is not finite", coordinate=bad)

    flat_point = point.ravel()
    flat_analytic = analytic.ravel()
    worst = 0.0
    for i in range(flat_point.size):
        shifted = []
        for sign in (1.0, -1.0):
            moved = flat_point.copy()
            moved[i] += sign * step
            value = float(np.sum(scalar_fn(T.constant(moved.reshape(point.shape))).value))
            if not np.isfinite(value):
                raise NonFiniteError("loss is not finite at a shifted point", coordinate=i)
            shifted.append(value)
        numeric = (shifted[0] - shifted[1]) / (2.0 * step)
        error = abs(flat_analytic[i] - numeric) / max(1.0, abs(flat_analytic[i]))
        worst = max(worst, error)
    logger.debug(f"finite difference check over {flat_point.size} coordinates: max error {worst:.3e}")
    return worst
