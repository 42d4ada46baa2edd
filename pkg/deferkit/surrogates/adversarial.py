"""
Adversarial true losses, adversarial margin surrogates and their smooth
relaxations, for classification and regression.

The sup over the perturbation ball is estimated from a finite candidate set:
the ball center, its extreme points in one or two dimensions, an optional
grid, the searched per-outcome proxies and any points the caller passes in
``candidates``. With ``search=False`` only the deterministic ball points and
``candidates`` are used, so two losses can be compared on the same points.
"""
import logging
from typing import Optional

import numpy as np

from deferkit.agents.costs import CostModel, cost_reg_pred_adv, expert_costs_reg, shifted_costs, tau_weights
from deferkit.diffcore import tensor as T
from deferkit.diffcore.model import ScoreModel
from deferkit.errors import ContractViolation, NonFiniteError
from deferkit.surrogates.clean import comp_sum_matrix
from deferkit.surrogates.params import SurrogateParams

logger = logging.getLogger(__name__)


def _comp_sum_row(scores: np.ndarray, u: float) -> np.ndarray:
    """Phi^u(s, j) for every j of one score vector."""
    return comp_sum_matrix(T.constant(scores[None, :]), u).value[0]


def _check_finite(model: ScoreModel, x: np.ndarray) -> np.ndarray:
    scores = model.scores(x)
    if not np.all(np.isfinite(scores)):
        raise NonFiniteError("model scores are not finite at the clean input")
    return scores


def _mu(cm: CostModel, y: int, m) -> np.ndarray:
    return shifted_costs(cm, np.array([y]), np.asarray(m, dtype=int).reshape(1, -1))[0]


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------

def adv_true_def_loss_class(h: ScoreModel, x: np.ndarray, y: int, m, cm: CostModel, ball, plan,
                            candidates: Optional[np.ndarray] = None, search: bool = True) -> float:
    """
    Candidate-set estimate of sum_j mu_j sup_{x'} 1{decision(x') = j}.

    Every outcome decided at some evaluated point counts once. Sampling can miss
    outcomes, so this is a lower bound of the exact value.
    """
    from deferkit.attacks import reachable_outcomes

    x = np.asarray(x, dtype=np.float64)
    _check_finite(h, x)
    reach = reachable_outcomes(h, x[None, :], ball, plan, extra_points=candidates, search=search)[0]
    return float(_mu(cm, y, m) @ reach)


def adv_surrogate_def_class(h: ScoreModel, x: np.ndarray, y: int, m, cm: CostModel, params: SurrogateParams,
                            ball, plan, candidates: Optional[np.ndarray] = None, search: bool = True) -> float:
    """sum_j (sum_{i != j} mu_i) sup_{x'} Phi^{rho,u}(h(x'), j)."""
    from deferkit.attacks import surrogate_sups

    x = np.asarray(x, dtype=np.float64)
    _check_finite(h, x)
    sups = surrogate_sups(h, x[None, :], ball, plan, params, extra_points=candidates, search=search)[0]
    return float(tau_weights(_mu(cm, y, m)) @ sups)


def smooth_adv_cls(h: ScoreModel, x: np.ndarray, j: int, params: SurrogateParams, ball, plan,
                   candidates: Optional[np.ndarray] = None, search: bool = True) -> float:
    """
    Phi^u(h(x)/rho, j) + kappa * sup_{x'} || Delta_h(x', j) - Delta_h(x, j) ||_2.

    Args:
        h (ScoreModel): Policy
        x (ndarray): Clean input
        j (int): Outcome
        params (SurrogateParams): u, rho and kappa
        ball (PerturbationBall): Threat model
        plan (AttackPlan): Search configuration
        candidates (Optional[ndarray]): Extra points to evaluate
        search (bool): Run the penalty ascent

    Returns:
        float: Smooth adversarial surrogate of outcome j
    """
    if not 0 <= j < h.output_dim:
        raise ContractViolation(f"outcome {j} outside 0..{h.output_dim - 1}")
    return float(_smooth_terms(h, np.asarray(x, dtype=np.float64), params, ball, plan, candidates, search)[j])


def _smooth_terms(h: ScoreModel, x: np.ndarray, params: SurrogateParams, ball, plan,
                  candidates: Optional[np.ndarray], search: bool) -> np.ndarray:
    from deferkit.attacks import penalty_sups

    scores = _check_finite(h, x)
    clean = _comp_sum_row(scores / params.rho, params.u)
    if params.kappa == 0:
        return clean
    penalty = penalty_sups(h, x[None, :], ball, plan, params, extra_points=candidates, search=search)[0]
    return clean + params.kappa * penalty


def smooth_adv_def_class(h: ScoreModel, x: np.ndarray, y: int, m, cm: CostModel, params: SurrogateParams,
                         ball, plan, candidates: Optional[np.ndarray] = None, search: bool = True) -> float:
    """sum_j (sum_{i != j} mu_i) smooth_adv_cls(h, x, j); the robust classification objective."""
    x = np.asarray(x, dtype=np.float64)
    return float(tau_weights(_mu(cm, y, m)) @ _smooth_terms(h, x, params, ball, plan, candidates, search))


# ---------------------------------------------------------------------------
# regression
# ---------------------------------------------------------------------------

def adversarial_reg_costs(f: ScoreModel, x: np.ndarray, t, m, cm: CostModel, ball, plan) -> np.ndarray:
    """(c~_0, c_1, ..., c_J): the predictor cost inflated by its worst case over the ball."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    experts = expert_costs_reg(cm, np.asarray(m, dtype=np.float64).reshape(1, cm.num_experts, -1), t[None, :])[0]
    return np.concatenate([[cost_reg_pred_adv(cm, f, x, t, ball, plan)], experts])


def adv_true_def_loss_reg(r: ScoreModel, f: ScoreModel, x: np.ndarray, t, m, cm: CostModel, ball, plan,
                          candidates: Optional[np.ndarray] = None, search: bool = True) -> float:
    """sum_j c~_j [outcome j reachable]."""
    from deferkit.attacks import reachable_outcomes

    x = np.asarray(x, dtype=np.float64)
    _check_finite(r, x)
    costs = adversarial_reg_costs(f, x, t, m, cm, ball, plan)
    reach = reachable_outcomes(r, x[None, :], ball, plan, extra_points=candidates, search=search)[0]
    return float(costs @ reach)


def adv_surrogate_def_reg(r: ScoreModel, f: ScoreModel, x: np.ndarray, t, m, cm: CostModel,
                          params: SurrogateParams, ball, plan, candidates: Optional[np.ndarray] = None,
                          search: bool = True) -> float:
    """sum_j (sum_{i != j} c~_i) sup Phi^{rho,u}(r(x'), j) - (J-1) c~_0."""
    from deferkit.attacks import surrogate_sups

    x = np.asarray(x, dtype=np.float64)
    _check_finite(r, x)
    costs = adversarial_reg_costs(f, x, t, m, cm, ball, plan)
    sups = surrogate_sups(r, x[None, :], ball, plan, params, extra_points=candidates, search=search)[0]
    J = costs.size - 1
    return float(tau_weights(costs) @ sups - (J - 1) * costs[0])


def smooth_adv_def_reg(r: ScoreModel, f: ScoreModel, x: np.ndarray, t, m, cm: CostModel,
                       params: SurrogateParams, ball, plan, candidates: Optional[np.ndarray] = None,
                       search: bool = True) -> float:
    """-(J-1) c~_0 + sum_j (sum_{i != j} c~_i) smooth_adv_cls(r, x, j); the robust regression objective."""
    x = np.asarray(x, dtype=np.float64)
    costs = adversarial_reg_costs(f, x, t, m, cm, ball, plan)
    terms = _smooth_terms(r, x, params, ball, plan, candidates, search)
    J = costs.size - 1
    return float(tau_weights(costs) @ terms - (J - 1) * costs[0])
