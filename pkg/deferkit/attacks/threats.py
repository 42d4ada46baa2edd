"""
Untargeted and targeted attacks on deferral systems.

The untargeted attack ascends the clean surrogate deferral loss so the
system ends up taking an expensive action. The targeted attack descends
Phi^u(policy(x'), nu) so the policy is forced to pick action nu.
"""
import logging
from typing import Optional, Tuple, Union

import numpy as np

from deferkit.agents.costs import CostModel, expert_costs_reg, regression_loss_node
from deferkit.attacks.ball import AttackPlan, PerturbationBall
from deferkit.attacks.pgd import pgd_ascend
from deferkit.diffcore import tensor as T
from deferkit.diffcore.model import ScoreModel, forward
from deferkit.errors import ConfigurationError
from deferkit.surrogates.clean import (class_surrogate_weights, phi_u_batch,
                                       regression_surrogate_batch, weighted_comp_sum)
from deferkit.surrogates.params import SurrogateParams
from deferkit.systems import ClassificationSystem, RegressionSystem

logger = logging.getLogger(__name__)

System = Union[ClassificationSystem, RegressionSystem]


def clean_surrogate_objective(system: System, targets: np.ndarray, m: np.ndarray, cm: CostModel,
                              params: SurrogateParams):
    """Row-wise clean surrogate deferral loss as a function of the input batch."""
    if system.task == "classification":
        weights = class_surrogate_weights(cm, targets, m)

        def objective(z):
            return weighted_comp_sum(forward(system.h, z), weights, params.u)
        return objective

    targets = np.asarray(targets, dtype=np.float64).reshape(len(targets), -1)
    expert_costs = expert_costs_reg(cm, m, targets)

    def objective(z):
        predictor_cost = regression_loss_node(forward(system.f, z), targets, cm.base_loss) * cm.alphas[0] \
            + cm.betas[0]
        return regression_surrogate_batch(forward(system.r, z), predictor_cost, expert_costs, params.u)
    return objective


def untargeted_attack(system: System, x: np.ndarray, y_or_t, m, cm: CostModel, params: SurrogateParams,
                      ball: PerturbationBall, plan: AttackPlan, counter=None) -> np.ndarray:
    """
    Perturb ``x`` to maximize the clean surrogate deferral loss.

    Args:
        system (System): Classification (h) or regression (r, f) bundle
        x (ndarray): One input (d,) or a batch (n, d)
        y_or_t: Label(s) or regression target(s)
        m: Expert outputs of the example(s)
        cm (CostModel): Costs
        params (SurrogateParams): Family index u of the surrogate
        ball (PerturbationBall): Threat model
        plan (AttackPlan): Ascent configuration

    Returns:
        ndarray: Perturbed input(s) with the shape of ``x``
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    n = X.shape[0]
    if system.task == "classification":
        targets = np.asarray(y_or_t, dtype=int).reshape(n)
        m = np.asarray(m, dtype=int).reshape(n, -1)
    else:
        targets = np.asarray(y_or_t, dtype=np.float64).reshape(n, -1)
        m = np.asarray(m, dtype=np.float64).reshape(n, system.num_experts, -1)
    objective = clean_surrogate_objective(system, targets, m, cm, params)
    points, _ = pgd_ascend(objective, X, ball, plan, maximize=True, counter=counter, phase="untargeted")
    return points[0] if single else points


def targeted_attack(policy: ScoreModel, x: np.ndarray, nu: int, ball: PerturbationBall, plan: AttackPlan,
                    u: float = 1.0, counter=None) -> Tuple[np.ndarray, Union[bool, np.ndarray]]:
    """
    Perturb ``x`` so that ``policy`` decides action ``nu``.

    Returns:
        Tuple: (perturbed input(s), success flag(s) argmax policy(x') == nu)
    """
    if not 0 <= nu < policy.output_dim:
        raise ConfigurationError("invalid targeted attack", [f"nu={nu} outside 0..{policy.output_dim - 1}"])
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    targets = np.full(X.shape[0], nu)

    def objective(z):
        return phi_u_batch(forward(policy, z), targets, u)
    points, _ = pgd_ascend(objective, X, ball, plan, maximize=False, counter=counter, phase="targeted")
    success = np.argmax(policy.scores(points), axis=1) == nu
    if single:
        return points[0], bool(success[0])
    return points, success
