"""
Multiclass comp-sum surrogates and the clean deferral losses.

Batch kernels (``*_batch``) take a score Node of shape (n, |A|) and return
a Node of shape (n,). The public single-example functions wrap them and
return floats.
"""
import logging
from typing import Sequence

import numpy as np

from deferkit.agents.costs import CostModel, cost_class, cost_reg, shifted_costs, tau_weights
from deferkit.diffcore import tensor as T
from deferkit.errors import ContractViolation, NonFiniteError
from deferkit.surrogates.params import SurrogateParams
from deferkit.surrogates.transforms import psi_rho_node, psi_u_node, psi_u_of_log_node

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# batch kernels
# ---------------------------------------------------------------------------

def phi_u_batch(scores: T.Node, targets: np.ndarray, u: float) -> T.Node:
    """Phi^u(s, y) = Psi^u(sum_k exp(s_k - s_y) - 1), evaluated in log space."""
    z = T.logsumexp(scores, axis=1) - T.pick(scores, targets)
    return psi_u_of_log_node(z, u)


def comp_sum_matrix(scores: T.Node, u: float) -> T.Node:
    """Phi^u(s, j) for every action j at once, shape (n, |A|)."""
    z = T.expand(T.logsumexp(scores, axis=1), 1) - scores
    return psi_u_of_log_node(z, u)


def weighted_comp_sum(scores: T.Node, weights: np.ndarray, u: float) -> T.Node:
    """sum_j w_j Phi^u(s, j) per row."""
    return T.sum_(T.mul(comp_sum_matrix(scores, u), weights), axis=1)


def target_margins(scores: T.Node, targets: np.ndarray) -> T.Node:
    """(s_y - s_k) for every k; the target's own column is 0."""
    return T.expand(T.pick(scores, targets), 1) - scores


def phi_rho_u_batch(scores: T.Node, targets: np.ndarray, rho: float, u: float) -> T.Node:
    """Phi^{rho,u}(s, y) = Psi^u(sum_{k != y} Psi_rho(s_y - s_k))."""
    targets = np.asarray(targets, dtype=int)
    mask = np.ones(scores.shape)
    mask[np.arange(scores.shape[0]), targets] = 0.0
    terms = T.mul(psi_rho_node(target_margins(scores, targets), rho), mask)
    return psi_u_node(T.sum_(terms, axis=1), u)


def margin_deviation_batch(adv_scores: T.Node, ref_scores: T.Node, targets: np.ndarray) -> T.Node:
    """|| Delta(x', j) - Delta(x, j) ||_2 with Delta(., j) = (h_j - h_k)_k."""
    return T.row_norm(target_margins(adv_scores, targets) - target_margins(ref_scores, targets))


def class_surrogate_weights(cm: CostModel, y: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Weights of the clean classification surrogate: 1{j = y} on classes, 1 - c_e on experts."""
    y = np.asarray(y, dtype=int)
    mu = shifted_costs(cm, y, m)
    K = cm.num_classes
    onehot = (np.arange(K)[None, :] == y[:, None]).astype(np.float64)
    return np.concatenate([onehot, 1.0 - mu[:, K:]], axis=1)


def surrogate_class_batch(scores: T.Node, y: np.ndarray, m: np.ndarray, cm: CostModel, u: float) -> T.Node:
    return weighted_comp_sum(scores, class_surrogate_weights(cm, y, m), u)


def cost_weighted_class_batch(scores: T.Node, y: np.ndarray, m: np.ndarray, cm: CostModel, u: float) -> T.Node:
    """sum_j (sum_{i != j} mu_i) Phi^u(s, j), the smooth objective at zero radius."""
    return weighted_comp_sum(scores, tau_weights(shifted_costs(cm, y, m)), u)


def regression_surrogate_batch(rejector_scores: T.Node, predictor_cost: T.Node,
                               expert_costs: np.ndarray, u: float) -> T.Node:
    """sum_j tau_j Phi^u(r, j) - (J-1) c_0 with the predictor cost as a graph node."""
    J = expert_costs.shape[1]
    costs = T.concat([T.expand(predictor_cost, 1), T.constant(expert_costs)], axis=1)
    tau = T.expand(T.sum_(costs, axis=1), 1) - costs
    surrogate = T.sum_(T.mul(comp_sum_matrix(rejector_scores, u), tau), axis=1)
    return surrogate - predictor_cost * float(J - 1)


# ---------------------------------------------------------------------------
# single-example API
# ---------------------------------------------------------------------------

def _scores_row(scores: Sequence[float], target: int) -> T.Node:
    arr = np.asarray(scores, dtype=np.float64).ravel()
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("scores must be finite")
    if not 0 <= target < arr.size:
        raise ContractViolation(f"target {target} outside 0..{arr.size - 1}")
    return T.constant(arr[None, :])


def phi_cls_u(scores: Sequence[float], target: int, u: float = 1.0) -> float:
    """
    Comp-sum surrogate Phi^u of one score vector.

    Args:
        scores (Sequence[float]): Scores over the action space
        target (int): Target action
        u (float): Family index

    Returns:
        float: Nonnegative loss, decreasing in the target's score
    """
    row = _scores_row(scores, target)
    return float(phi_u_batch(row, np.array([target]), u).value[0])


def phi_cls_rho_u(scores: Sequence[float], target: int, params: SurrogateParams) -> float:
    """Margin surrogate Phi^{rho,u}; 0 when the target leads every competitor by rho."""
    row = _scores_row(scores, target)
    return float(phi_rho_u_batch(row, np.array([target]), params.rho, params.u).value[0])


def true_def_loss_class(decision: int, y: int, m: Sequence[int], cm: CostModel) -> float:
    """Realized cost of a classification decision."""
    return cost_class(cm, decision, m, y)


def surrogate_def_class(scores: Sequence[float], y: int, m: Sequence[int], cm: CostModel, u: float = 1.0) -> float:
    """Phi^u(s, y) + sum_e (1 - c_e) Phi^u(s, K + e)."""
    row = _scores_row(scores, y)
    if row.shape[1] != cm.action_count:
        raise ContractViolation(f"expected {cm.action_count} scores, got {row.shape[1]}")
    m = np.asarray(m, dtype=int).reshape(1, -1)
    return float(surrogate_class_batch(row, np.array([y]), m, cm, u).value[0])


def weighted_def_class(scores: Sequence[float], y: int, m: Sequence[int], cm: CostModel, u: float = 1.0) -> float:
    """Cost-weighted clean objective sum_j (sum_{i != j} mu_i) Phi^u(s, j)."""
    row = _scores_row(scores, y)
    m = np.asarray(m, dtype=int).reshape(1, -1)
    return float(cost_weighted_class_batch(row, np.array([y]), m, cm, u).value[0])


def true_def_loss_reg(decision: int, f_out, t, m, cm: CostModel) -> float:
    """Realized cost of a regression decision."""
    return cost_reg(cm, decision, f_out, m, t)


def surrogate_def_reg_from_costs(r_scores: Sequence[float], costs: Sequence[float], u: float = 1.0) -> float:
    """sum_j tau_j Phi^u(r, j) - (J-1) c_0 for an explicit cost vector (c_0, ..., c_J)."""
    costs = np.asarray(costs, dtype=np.float64)
    row = _scores_row(r_scores, 0)
    if row.shape[1] != costs.size:
        raise ContractViolation(f"expected {costs.size} rejector scores, got {row.shape[1]}")
    value = weighted_comp_sum(row, tau_weights(costs)[None, :], u).value[0]
    return float(value - (costs.size - 2) * costs[0])


def surrogate_def_reg(f_out, r_scores: Sequence[float], t, m, cm: CostModel, u: float = 1.0) -> float:
    """Clean regression surrogate with c_0 taken as the predictor cost."""
    costs = [cost_reg(cm, j, f_out, m, t) for j in range(cm.action_count)]
    return surrogate_def_reg_from_costs(r_scores, costs, u)
