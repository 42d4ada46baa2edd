"""
Transform families behind every surrogate.

psi_u is the comp-sum outer transform (logistic for u=1, generalized
cross-entropy for 0<u<1, MAE-like for u=2). psi_rho is the clipped
rho-margin transform. The ``*_node`` variants build differentiable graphs.
"""
import logging
from typing import Union

import numpy as np

from deferkit.diffcore import tensor as T
from deferkit.errors import DomainError

logger = logging.getLogger(__name__)

Number = Union[float, np.ndarray]


def psi_u(v: Number, u: float) -> Number:
    """
    Psi^u(v) = log(1+v) if u == 1 else ((1+v)^(1-u) - 1) / (1-u).

    Args:
        v (float or ndarray): Nonnegative argument
        u (float): Family index, positive

    Returns:
        float or ndarray: Psi^u(v); Psi^u(0) = 0
    """
    if u <= 0:
        raise DomainError(f"u must be positive, got {u}")
    arr = np.asarray(v, dtype=np.float64)
    if np.any(arr < 0):
        raise DomainError(f"Psi^u is defined for v >= 0, got {v}")
    z = np.log1p(arr)
    out = z if u == 1 else np.expm1((1.0 - u) * z) / (1.0 - u)
    return float(out) if out.ndim == 0 else out


def psi_rho(v: Number, rho: float) -> Number:
    """Psi_rho(v) = min(max(0, 1 - v/rho), 1)."""
    if rho <= 0:
        raise DomainError(f"rho must be positive, got {rho}")
    out = np.clip(1.0 - np.asarray(v, dtype=np.float64) / rho, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def psi_exp_rho(v: Number, rho: float) -> Number:
    """Exponential link exp(-v/rho); dominates psi_rho everywhere."""
    if rho <= 0:
        raise DomainError(f"rho must be positive, got {rho}")
    out = np.exp(-np.asarray(v, dtype=np.float64) / rho)
    return float(out) if out.ndim == 0 else out


def psi_u_at_one(u: float) -> float:
    """Psi^u(1): log 2 for u=1, the constant in the consistency bounds."""
    return float(psi_u(1.0, u))


def regression_bound_factor(u: float) -> float:
    """max(1, Psi^u(1)), the factor in the regression consistency bound."""
    return max(1.0, psi_u_at_one(u))


def psi_u_of_log_node(z: T.Node, u: float) -> T.Node:
    """Psi^u applied to v where z = log(1 + v) is given."""
    if u == 1:
        return z
    return T.expm1(z * (1.0 - u)) / (1.0 - u)


def psi_u_node(v: T.Node, u: float) -> T.Node:
    return psi_u_of_log_node(T.log1p(v), u)


def psi_rho_node(v: T.Node, rho: float) -> T.Node:
    return T.clip(1.0 - v / rho, 0.0, 1.0)
