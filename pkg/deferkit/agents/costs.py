"""
Cost machinery for deferral.

Classification actions are 0-based: 0..K-1 predict a class, K..K+J-1 defer
to expert e = j - K. Regression actions: 0 trusts the predictor, j >= 1
defers to expert j - 1.
"""
import logging
from typing import List, Optional, Sequence, Union

import numpy as np

from deferkit.diffcore import tensor as T
from deferkit.errors import ConfigurationError, ContractViolation, NonFiniteError

logger = logging.getLogger(__name__)

BASE_LOSSES = ("squared", "absolute")
CLAMP_POLICIES = ("strict", "none")


class CostModel:
    """Per-action scale alpha_j and consultation fee beta_j."""

    def __init__(self,
                 alphas: Sequence[float],
                 betas: Sequence[float],
                 task: str = "classification",
                 num_classes: int = 0,
                 base_loss: str = "squared",
                 clamp_policy: str = "strict"):
        """
        Initialize the cost model.

        Args:
            alphas (Sequence[float]): One nonnegative scale per action
            betas (Sequence[float]): One nonnegative fee per action
            task (str): "classification" or "regression"
            num_classes (int): K for classification, ignored for regression
            base_loss (str): Regression loss L, "squared" or "absolute"
            clamp_policy (str): "strict" rejects classification costs that can exceed 1
        """
        self.alphas = np.asarray(alphas, dtype=np.float64)
        self.betas = np.asarray(betas, dtype=np.float64)
        self.task = task
        self.num_classes = int(num_classes) if task == "classification" else 0
        self.base_loss = base_loss
        self.clamp_policy = clamp_policy

        errors = []
        if task not in ("classification", "regression"):
            errors.append(f"task must be classification or regression, got {task!r}")
        if self.alphas.shape != self.betas.shape or self.alphas.ndim != 1:
            errors.append(f"alphas {self.alphas.shape} and betas {self.betas.shape} must be equal-length vectors")
        elif self.alphas.size < 2:
            errors.append("the action space needs at least two actions")
        if np.any(self.alphas < 0) or np.any(self.betas < 0):
            errors.append("alphas and betas must be nonnegative")
        if base_loss not in BASE_LOSSES:
            errors.append(f"base_loss must be one of {BASE_LOSSES}, got {base_loss!r}")
        if clamp_policy not in CLAMP_POLICIES:
            errors.append(f"clamp_policy must be one of {CLAMP_POLICIES}, got {clamp_policy!r}")
        if task == "classification" and not errors:
            if not 0 < self.num_classes <= self.alphas.size:
                errors.append(f"num_classes={num_classes} does not fit {self.alphas.size} actions")
            if clamp_policy == "strict":
                for j in np.flatnonzero(self.alphas + self.betas > 1.0 + 1e-12):
                    errors.append(f"action {j}: alpha + beta = {self.alphas[j] + self.betas[j]:g} exceeds 1 "
                                  f"under the strict clamp policy")
        if errors:
            raise ConfigurationError("invalid cost model", errors)

    @classmethod
    def for_classification(cls, num_classes: int, expert_fees: Sequence[float],
                           alpha: Union[float, Sequence[float]] = 1.0,
                           clamp_policy: str = "strict") -> "CostModel":
        """alpha everywhere, zero fee on prediction actions, ``expert_fees`` on deferrals."""
        size = num_classes + len(expert_fees)
        alphas = np.broadcast_to(np.asarray(alpha, dtype=np.float64), (size,))
        betas = np.concatenate([np.zeros(num_classes), np.asarray(expert_fees, dtype=np.float64)])
        return cls(alphas, betas, task="classification", num_classes=num_classes, clamp_policy=clamp_policy)

    @classmethod
    def for_regression(cls, expert_fees: Sequence[float], predictor_fee: float = 0.0,
                       alpha: Union[float, Sequence[float]] = 1.0,
                       base_loss: str = "squared") -> "CostModel":
        size = 1 + len(expert_fees)
        alphas = np.broadcast_to(np.asarray(alpha, dtype=np.float64), (size,))
        betas = np.concatenate([[predictor_fee], np.asarray(expert_fees, dtype=np.float64)])
        return cls(alphas, betas, task="regression", base_loss=base_loss, clamp_policy="none")

    @property
    def action_count(self) -> int:
        return int(self.alphas.size)

    @property
    def num_experts(self) -> int:
        if self.task == "classification":
            return self.action_count - self.num_classes
        return self.action_count - 1

    def _check_action(self, j: int) -> None:
        if not 0 <= j < self.action_count:
            raise ContractViolation(f"action {j} outside 0..{self.action_count - 1}")


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------

def cost_class(cm: CostModel, j: int, m: Sequence[int], y: int) -> float:
    """
    Shifted cost mu_j of taking action ``j`` on an example with label ``y``.

    Args:
        cm (CostModel): Classification cost model
        j (int): Action index in 0..K+J-1
        m (Sequence[int]): Expert outputs m_1..m_J
        y (int): True label

    Returns:
        float: alpha_j 1{j != y} + beta_j for a class, alpha_j 1{m_e != y} + beta_j for expert e = j - K
    """
    cm._check_action(j)
    K = cm.num_classes
    wrong = (j != y) if j < K else (int(m[j - K]) != y)
    return float(cm.alphas[j] * wrong + cm.betas[j])


def shifted_costs(cm: CostModel, y: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Vectorized mu: (n,) labels and (n, J) expert outputs to an (n, K+J) matrix."""
    y = np.asarray(y, dtype=int)
    m = np.asarray(m, dtype=int).reshape(y.shape[0], -1)
    K = cm.num_classes
    if m.shape[1] != cm.num_experts:
        raise ContractViolation(f"expected {cm.num_experts} expert outputs, got {m.shape[1]}")
    class_wrong = np.arange(K)[None, :] != y[:, None]
    expert_wrong = m != y[:, None]
    wrong = np.concatenate([class_wrong, expert_wrong], axis=1).astype(np.float64)
    return cm.alphas[None, :] * wrong + cm.betas[None, :]


# ---------------------------------------------------------------------------
# regression
# ---------------------------------------------------------------------------

def regression_loss(prediction, target, kind: str = "squared"):
    """L(prediction, target) summed over the last (output) axis."""
    diff = np.asarray(prediction, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    per = diff ** 2 if kind == "squared" else np.abs(diff)
    return per.sum(axis=-1) if per.ndim > 0 else per


def regression_loss_node(prediction: T.Node, target: np.ndarray, kind: str = "squared") -> T.Node:
    """Differentiable L for a batch: (n, m) predictions to (n,) losses."""
    diff = T.sub(prediction, target)
    per = T.mul(diff, diff) if kind == "squared" else T.abs_(diff)
    return T.sum_(per, axis=1)


def cost_reg(cm: CostModel, j: int, f_out, m, t) -> float:
    """
    Regression cost c_j.

    j = 0 gives alpha_0 L(f_out, t) + beta_0; j >= 1 gives alpha_j L(m_{j-1}, t) + beta_j.
    """
    cm._check_action(j)
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if j == 0:
        output = np.atleast_1d(np.asarray(f_out, dtype=np.float64))
    else:
        output = np.atleast_1d(np.asarray(m, dtype=np.float64).reshape(cm.num_experts, -1)[j - 1])
    return float(cm.alphas[j] * regression_loss(output, t, cm.base_loss) + cm.betas[j])


def expert_costs_reg(cm: CostModel, m: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Costs of the J expert actions: (n, J, m) outputs and (n, m) targets to (n, J)."""
    t = np.asarray(t, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64).reshape(t.shape[0], cm.num_experts, -1)
    losses = regression_loss(m, t[:, None, :], cm.base_loss)
    return cm.alphas[None, 1:] * losses + cm.betas[None, 1:]


def regression_costs(cm: CostModel, f_out: np.ndarray, m: np.ndarray, t: np.ndarray) -> np.ndarray:
    """All J+1 regression costs for a batch, shape (n, J+1)."""
    t = np.asarray(t, dtype=np.float64)
    f_out = np.asarray(f_out, dtype=np.float64).reshape(t.shape)
    predictor = cm.alphas[0] * regression_loss(f_out, t, cm.base_loss) + cm.betas[0]
    return np.concatenate([predictor[:, None], expert_costs_reg(cm, m, t)], axis=1)


def tau_weights(costs: Sequence[float]) -> np.ndarray:
    """tau_j = sum_{i != j} c_i; works row-wise on a matrix."""
    costs = np.asarray(costs, dtype=np.float64)
    return costs.sum(axis=-1, keepdims=True) - costs


def cost_reg_pred_adv(cm: CostModel, f, x, t, ball, plan) -> float:
    """
    Predictor cost under attack: alpha_0 sup_{x' in ball} L(f(x'), t) + beta_0.

    The sup is estimated by projected ascent plus the ball candidates; the ball
    center is always evaluated, so the result never drops below the clean cost.
    """
    from deferkit.attacks import predictor_worst_case

    x = np.asarray(x, dtype=np.float64)
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    worst = predictor_worst_case(f, x[None, :], t[None, :], ball, plan, cm.base_loss)[0]
    if not np.isfinite(worst):
        raise NonFiniteError("predictor loss is not finite during ascent")
    return float(cm.alphas[0] * worst + cm.betas[0])
