"""
Brute-force checks of the deferral losses.

Formulas are written out here again, straight from their definitions, so
the checks do not share code paths with the loss implementations under test.
"""
import itertools
import logging
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

from deferkit.agents.costs import CostModel, shifted_costs
from deferkit.oracle.instances import DiscreteInstance, bayes_conditional_risk
from deferkit.oracle.reachability import DEFAULT_RESOLUTION, ScoresFn, ball_grid

logger = logging.getLogger(__name__)

ShiftedCostFn = Callable[[CostModel, np.ndarray, np.ndarray], np.ndarray]


class CheckResult(BaseModel):
    """Outcome of one named check."""
    name: str
    success: bool
    checked: int = 0
    witness: Optional[Dict[str, Any]] = Field(None, description="First counterexample, if any")
    details: Dict[str, Any] = Field(default_factory=dict)


class CalibrationGap(BaseModel):
    """Exact true and surrogate calibration gaps of a policy at one point."""
    true_gap: float
    surrogate_gap: float
    psi_u_one: float
    holds: bool = Field(..., description="psi_u(1) * true_gap <= surrogate_gap + 1e-6")
    surrogate_infimum: float
    infimum_source: str = Field(..., description="'constant-score family' or 'trained policy'")
    reachable: List[int] = Field(default_factory=list)


# ---------------------------------------------------------------------------
# reference formulas
# ---------------------------------------------------------------------------

def _psi_u(v, u: float):
    v = np.asarray(v, dtype=np.float64)
    if u == 1:
        return np.log(1.0 + v)
    return ((1.0 + v) ** (1.0 - u) - 1.0) / (1.0 - u)


def _margin_surrogate(scores: np.ndarray, j: int, rho: float, u: float) -> np.ndarray:
    """Margin surrogate of outcome j for every row of ``scores``."""
    penalties = np.minimum(np.maximum(0.0, 1.0 - (scores[:, j:j + 1] - scores) / rho), 1.0)
    penalties[:, j] = 0.0
    return _psi_u(penalties.sum(axis=1), u)


def deferral_loss_reference(decision: int, y: int, m: Sequence[int], K: int,
                            alphas: np.ndarray, betas: np.ndarray) -> float:
    """
    Score-based deferral loss, written per case.

    A prediction costs alpha_j if wrong plus its fee; deferring to expert e
    costs alpha_{K+e} if that expert is wrong plus the consultation fee.
    """
    if decision < K:
        return float(alphas[decision] * (1.0 if decision != y else 0.0) + betas[decision])
    e = decision - K
    return float(alphas[decision] * (1.0 if m[e] != y else 0.0) + betas[decision])


# ---------------------------------------------------------------------------
# exhaustive shifted-cost equivalence
# ---------------------------------------------------------------------------

def exhaustive_true_loss_check(max_classes: int = 3,
                               max_experts: int = 2,
                               alpha: float = 1.0,
                               expert_fees: Optional[Sequence[float]] = None,
                               shifted_cost_fn: Optional[ShiftedCostFn] = None) -> CheckResult:
    """
    Enumerate every (K, J, decision, y, m) with K <= max_classes and J <= max_experts.

    Asserts sum_j mu_j 1{decision = j} equals the per-case deferral loss.
    Action spaces with fewer than two actions are skipped.

    Args:
        max_classes (int): Largest K
        max_experts (int): Largest J
        alpha (float): Error scale of every action
        expert_fees (Optional[Sequence[float]]): Fee of expert e; zero by default
        shifted_cost_fn (Optional[Callable]): Implementation under test, ``shifted_costs`` by default

    Returns:
        CheckResult: success, number of tuples checked and the first counterexample
    """
    shifted_cost_fn = shifted_cost_fn or shifted_costs
    checked = 0
    for K in range(1, max_classes + 1):
        for J in range(0, max_experts + 1):
            if K + J < 2:
                continue
            fees = list(expert_fees[:J]) if expert_fees is not None else [0.0] * J
            fees += [0.0] * (J - len(fees))
            cm = CostModel.for_classification(K, fees, alpha=alpha, clamp_policy="none")
            for y in range(K):
                for m in itertools.product(range(K), repeat=J):
                    mu = shifted_cost_fn(cm, np.array([y]), np.array([m], dtype=int).reshape(1, J))[0]
                    for decision in range(K + J):
                        lhs = float(np.sum(mu * (np.arange(K + J) == decision)))
                        rhs = deferral_loss_reference(decision, y, m, K, cm.alphas, cm.betas)
                        checked += 1
                        if abs(lhs - rhs) > 1e-12:
                            witness = {"K": K, "J": J, "decision": decision, "y": y, "m": list(m),
                                       "shifted": lhs, "reference": rhs}
                            logger.warning(f"Shifted-cost counterexample: {witness}")
                            return CheckResult(name="shifted_cost_equivalence", success=False,
                                               checked=checked, witness=witness)
    return CheckResult(name="shifted_cost_equivalence", success=True, checked=checked)


# ---------------------------------------------------------------------------
# calibration gaps
# ---------------------------------------------------------------------------

def staircase_infimum(weights: np.ndarray, u: float) -> float:
    """
    Smallest surrogate risk over constant scores spaced at least rho apart.

    At such scores the action ranked r-th (0 = top) trails exactly r others by
    rho or more, so its margin surrogate is psi_u(r). The best order puts the
    largest weight on top.
    """
    order = np.argsort(-weights, kind="stable")
    return float(sum(weights[j] * _psi_u(rank, u) for rank, j in enumerate(order)))


def calibration_gap_check(inst: DiscreteInstance,
                          policy_scores_fn: ScoresFn,
                          params,
                          ball,
                          point: int = 0,
                          grid_resolution: int = DEFAULT_RESOLUTION) -> CalibrationGap:
    """
    True and surrogate calibration gaps of a policy at one point of an instance.

    The true conditional risk charges every reachable outcome its conditional
    cost; the best achievable is min_j cost_j. The surrogate conditional risk
    weights the worst-case margin surrogate of outcome j by the sum of the
    other costs; its infimum is approximated over constant scores spaced rho
    apart and the policy itself, so the check is a necessary condition only.

    Args:
        inst (DiscreteInstance): Conditional costs
        policy_scores_fn (Callable): Policy scores of a batch
        params (SurrogateParams): u and rho
        ball (PerturbationBall): Threat model
        point (int): Index of the point in the instance
        grid_resolution (int): Grid points per axis

    Returns:
        CalibrationGap: both gaps, psi_u(1) and whether psi_u(1) * true <= surrogate + 1e-6
    """
    costs = inst.cond_costs[inst.index_of(point)]
    A = costs.size
    grid = ball_grid(inst.points[inst.index_of(point)], ball, grid_resolution)
    scores = np.atleast_2d(np.asarray(policy_scores_fn(grid), dtype=np.float64))
    reachable = sorted(int(j) for j in np.unique(np.argmax(scores, axis=1)))

    bayes, _ = bayes_conditional_risk(inst, point)
    true_risk = float(sum(costs[j] for j in reachable))
    true_gap = true_risk - bayes

    weights = costs.sum() - costs
    sups = np.array([_margin_surrogate(scores, j, params.rho, params.u).max() for j in range(A)])
    policy_risk = float(weights @ sups)
    staircase = staircase_infimum(weights, params.u)
    infimum = min(staircase, policy_risk)
    surrogate_gap = policy_risk - infimum
    psi_one = float(_psi_u(1.0, params.u))
    return CalibrationGap(
        true_gap=true_gap,
        surrogate_gap=surrogate_gap,
        psi_u_one=psi_one,
        holds=psi_one * true_gap <= surrogate_gap + 1e-6,
        surrogate_infimum=infimum,
        infimum_source="constant-score family" if staircase <= policy_risk else "trained policy",
        reachable=reachable,
    )
