"""
Verification suite

Runs the oracle checks on randomly drawn small instances and collects them
into one result document with overall statistics and the failed checks.
"""
import json
import logging
import math
import os
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator

from deferkit.agents.costs import CostModel, shifted_costs, tau_weights
from deferkit.agents.experts import ExpertPanel, ExpertSpec, sample_expert_outputs
from deferkit.attacks.ball import AttackPlan, PerturbationBall
from deferkit.data.dataset import Dataset
from deferkit.data.synthetic import gen_blobs
from deferkit.diffcore import tensor as T
from deferkit.diffcore.gradcheck import finite_diff_check
from deferkit.diffcore.model import ScoreModel
from deferkit.evaluation.decisions import decide_class
from deferkit.oracle.checks import CheckResult, calibration_gap_check, exhaustive_true_loss_check
from deferkit.oracle.instances import DiscreteInstance, bayes_conditional_risk
from deferkit.oracle.reachability import exact_disagreement, exact_reachability
from deferkit.surrogates.adversarial import (adv_surrogate_def_class, adv_true_def_loss_class,
                                             adv_true_def_loss_reg, smooth_adv_def_class,
                                             smooth_adv_def_reg)
from deferkit.surrogates.clean import (phi_cls_rho_u, phi_cls_u, phi_rho_u_batch, phi_u_batch,
                                       surrogate_def_reg, true_def_loss_class, true_def_loss_reg,
                                       weighted_def_class)
from deferkit.surrogates.params import SurrogateParams
from deferkit.surrogates.smooth import smooth_class_batch, smooth_reg_batch
from deferkit.surrogates.transforms import psi_u, psi_u_at_one, regression_bound_factor
from deferkit.training.audit import PassCounter, audit_epoch_cost
from deferkit.training.trainer import TrainConfig, train_rerm_c

logger = logging.getLogger(__name__)

GRADIENT_TOLERANCE = 1e-4
REDUCTION_TOLERANCE = 1e-10


class VerifySettings(BaseModel):
    """Sizes of the verification suite."""
    trials: int = Field(20, ge=1, description="Random instances for the reachability and calibration checks")
    gradient_configs: int = Field(100, ge=1, description="Random configurations per differentiated surrogate")
    reduction_instances: int = Field(1000, ge=1, description="Random instances for the gamma = 0 reductions")
    smooth_bound_tuples: int = Field(1000, ge=1, description="Random (h, x, x', j) tuples for the smooth bound")
    bayes_instances: int = Field(100, ge=1, description="Random discrete instances for the Bayes identity")
    epoch_shapes: List[Tuple[int, int, int]] = Field(
        default_factory=lambda: [(10, 4, 5), (1, 2, 1), (32, 5, 10)],
        description="(n, |A|, T) of each audited training epoch")
    grid_resolution: int = Field(1001, ge=2, description="Grid points per axis for exact enumeration")
    seed: int = 0

    @field_validator("epoch_shapes")
    @classmethod
    def _shapes_fit(cls, shapes: List[Tuple[int, int, int]]) -> List[Tuple[int, int, int]]:
        for n, A, T_steps in shapes:
            if n < 1 or A < 2 or T_steps < 1:
                raise ValueError(f"epoch shape {(n, A, T_steps)} needs n >= 1, |A| >= 2 and T >= 1")
        return shapes


# ---------------------------------------------------------------------------
# individual checks
# ---------------------------------------------------------------------------

def check_constants() -> CheckResult:
    values = {
        "psi_u(1, u=1)": (psi_u(1.0, 1.0), math.log(2.0)),
        "psi_u(1, u=2)": (psi_u(1.0, 2.0), 0.5),
        "psi_u_at_one(1)": (psi_u_at_one(1.0), math.log(2.0)),
        "regression_bound_factor(1)": (regression_bound_factor(1.0), 1.0),
        "regression_bound_factor(0.25)": (regression_bound_factor(0.25), max(1.0, (2 ** 0.75 - 1) / 0.75)),
    }
    bad = {k: v for k, v in values.items() if abs(v[0] - v[1]) > 1e-12}
    return CheckResult(name="psi_constants", success=not bad, checked=len(values),
                       witness={k: list(v) for k, v in bad.items()} or None)


def _random_margin_scores(rng: np.random.Generator, A: int, target: int, rho: float) -> np.ndarray:
    """Scores whose target margins stay away from the kinks at 0 and rho."""
    while True:
        scores = rng.normal(0.0, 1.5, size=A)
        margins = np.delete(scores[target] - scores, target)
        if np.all(np.abs(margins) > 1e-3) and np.all(np.abs(margins - rho) > 1e-3):
            return scores


def check_gradients(settings: VerifySettings) -> CheckResult:
    rng = np.random.default_rng([settings.seed, 11])
    worst: Dict[str, float] = {"phi_cls_u": 0.0, "phi_cls_rho_u": 0.0, "smooth_class": 0.0, "smooth_reg": 0.0}
    for _ in range(settings.gradient_configs):
        A = int(rng.integers(2, 6))
        j = int(rng.integers(0, A))
        u = float(rng.choice([0.5, 1.0, 1.5, 2.0]))
        rho = float(rng.uniform(0.5, 2.0))
        params = SurrogateParams(u=u, rho=rho, kappa=float(rng.uniform(0.1, 2.0)))

        point = rng.normal(size=(1, A))
        worst["phi_cls_u"] = max(worst["phi_cls_u"], finite_diff_check(
            lambda z: T.sum_(phi_u_batch(z, np.array([j]), u)), point))

        point = _random_margin_scores(rng, A, j, rho)[None, :]
        worst["phi_cls_rho_u"] = max(worst["phi_cls_rho_u"], finite_diff_check(
            lambda z: T.sum_(phi_rho_u_batch(z, np.array([j]), rho, u)), point))

        mu = rng.uniform(0.0, 1.0, size=(1, A))
        point = rng.normal(size=(1 + A, A))
        worst["smooth_class"] = max(worst["smooth_class"], finite_diff_check(
            lambda z: T.sum_(smooth_class_batch(T.getitem(z, slice(0, 1)), T.getitem(z, slice(1, None)),
                                                mu, params)), point))

        expert_costs = rng.uniform(0.0, 1.0, size=(1, A - 1))
        size = (1 + A) * A
        point = np.concatenate([rng.normal(size=size), [rng.uniform(0.1, 1.0)]])

        def smooth_reg(z):
            scores = T.reshape(T.getitem(z, slice(0, size)), (1 + A, A))
            predictor_cost = T.getitem(z, slice(size, size + 1))
            return T.sum_(smooth_reg_batch(T.getitem(scores, slice(0, 1)), T.getitem(scores, slice(1, None)),
                                           predictor_cost, expert_costs, params))
        worst["smooth_reg"] = max(worst["smooth_reg"], finite_diff_check(smooth_reg, point))

    return CheckResult(name="gradient_finite_differences", success=max(worst.values()) < GRADIENT_TOLERANCE,
                       checked=4 * settings.gradient_configs,
                       details={"configurations": settings.gradient_configs, "max_relative_error": worst})


def _linear_model(rng: np.random.Generator, d: int, A: int) -> ScoreModel:
    return ScoreModel.from_arrays([rng.normal(size=(A, d))], [rng.normal(size=A)])


def check_reductions(settings: VerifySettings) -> CheckResult:
    """Every adversarial loss at gamma = 0 against its clean counterpart."""
    rng = np.random.default_rng([settings.seed, 12])
    ball = PerturbationBall(p=2, gamma=0.0)
    plan = AttackPlan(steps=5)
    worst, checked = 0.0, 0
    for _ in range(settings.reduction_instances):
        K, J, d = int(rng.integers(2, 4)), int(rng.integers(1, 3)), 2
        u = float(rng.choice([0.5, 1.0, 2.0]))
        cm = CostModel.for_classification(K, rng.uniform(0.0, 0.2, size=J).tolist(), alpha=0.8)
        h = _linear_model(rng, d, K + J)
        x = rng.normal(size=d)
        y = int(rng.integers(0, K))
        m = rng.integers(0, K, size=J)
        mu = shifted_costs(cm, np.array([y]), m[None, :])[0]
        params = SurrogateParams(u=u, rho=float(rng.uniform(0.5, 2.0)), kappa=float(rng.uniform(0.0, 2.0)))
        scores = h.scores(x)

        pairs = [
            (adv_true_def_loss_class(h, x, y, m, cm, ball, plan), true_def_loss_class(decide_class(h, x), y, m, cm)),
            (adv_surrogate_def_class(h, x, y, m, cm, params, ball, plan),
             float(tau_weights(mu) @ np.array([phi_cls_rho_u(scores, j, params) for j in range(K + J)]))),
            (smooth_adv_def_class(h, x, y, m, cm, params.model_copy(update={"rho": 1.0}), ball, plan),
             weighted_def_class(scores, y, m, cm, u)),
        ]

        creg = CostModel.for_regression(rng.uniform(0.0, 0.1, size=J).tolist())
        r, f = _linear_model(rng, d, J + 1), _linear_model(rng, d, 1)
        t = rng.normal(size=1)
        m_reg = rng.normal(size=(J, 1))
        decision = int(np.argmax(r.scores(x)))
        reg_params = SurrogateParams(u=u, rho=1.0, kappa=0.0)
        pairs += [
            (adv_true_def_loss_reg(r, f, x, t, m_reg, creg, ball, plan),
             true_def_loss_reg(decision, f.scores(x), t, m_reg, creg)),
            (smooth_adv_def_reg(r, f, x, t, m_reg, creg, reg_params, ball, plan),
             surrogate_def_reg(f.scores(x), r.scores(x), t, m_reg, creg, u)),
        ]
        for adversarial, clean in pairs:
            worst = max(worst, abs(adversarial - clean))
            checked += 1
    return CheckResult(name="gamma_zero_reduction", success=worst <= REDUCTION_TOLERANCE, checked=checked,
                       details={"instances": settings.reduction_instances, "max_abs_difference": worst})


def check_smooth_bound(settings: VerifySettings) -> CheckResult:
    """Margin surrogate at a nearby point <= scaled clean surrogate + kappa * margin deviation, kappa = sqrt(|A|-1)/rho."""
    rng = np.random.default_rng([settings.seed, 13])
    checked = 0
    for _ in range(settings.smooth_bound_tuples):
        A, d = int(rng.integers(2, 6)), int(rng.integers(1, 4))
        rho = float(rng.uniform(0.25, 2.0))
        u = float(rng.choice([0.5, 1.0, 2.0]))
        params = SurrogateParams(u=u, rho=rho, kappa=SurrogateParams.certified_kappa(A, rho))
        h = ScoreModel(d, A, hidden_sizes=[4], activation="tanh", seed=int(rng.integers(0, 2 ** 31)),
                       init_scale=1.0)
        x = rng.normal(size=d)
        nearby = x + rng.uniform(-1.0, 1.0, size=d)
        j = int(rng.integers(0, A))
        s, s_near = h.scores(x), h.scores(nearby)
        deviation = np.linalg.norm((s_near[j] - s_near) - (s[j] - s))
        lhs = phi_cls_rho_u(s_near, j, params)
        rhs = phi_cls_u(s / rho, j, u) + params.kappa * deviation
        checked += 1
        if lhs > rhs + 1e-9:
            return CheckResult(name="smooth_upper_bound", success=False, checked=checked,
                               witness={"A": A, "j": j, "lhs": lhs, "rhs": rhs})
    return CheckResult(name="smooth_upper_bound", success=True, checked=checked,
                       details={"tuples": settings.smooth_bound_tuples})


def _constant_policy(A: int, action: int, d: int = 1) -> ScoreModel:
    bias = np.zeros(A)
    bias[action] = 1.0
    return ScoreModel.from_arrays([np.zeros((A, d))], [bias])


def check_bayes_identity(settings: VerifySettings) -> CheckResult:
    rng = np.random.default_rng([settings.seed, 14])
    ball = PerturbationBall(p="inf", gamma=0.3)
    checked = 0
    for _ in range(settings.bayes_instances):
        inst = DiscreteInstance.random(rng, num_points=3, action_count=int(rng.integers(2, 6)))
        for i in range(inst.points.shape[0]):
            value, action = bayes_conditional_risk(inst, i)
            costs = inst.cond_costs[i]
            reach = exact_reachability(_constant_policy(inst.action_count, action), inst.points[i], ball,
                                       settings.grid_resolution)
            checked += 1
            if value != costs.min() or reach.outcomes != [action] or costs[reach.outcomes].sum() != value:
                return CheckResult(name="bayes_identity", success=False, checked=checked,
                                   witness={"costs": costs.tolist(), "value": value, "reach": reach.outcomes})
    return CheckResult(name="bayes_identity", success=True, checked=checked,
                       details={"instances": settings.bayes_instances})


def check_reach_disagreement(settings: VerifySettings) -> CheckResult:
    """Singleton reach {k} means disagreement on every other outcome; two or more means all outcomes."""
    rng = np.random.default_rng([settings.seed, 15])
    checked = 0
    for _ in range(settings.trials):
        A = int(rng.integers(2, 5))
        h = _linear_model(rng, 1, A)
        x = rng.normal(size=1)
        ball = PerturbationBall(p="inf", gamma=float(rng.uniform(0.0, 1.0)))
        reach = set(exact_reachability(h, x, ball, settings.grid_resolution).outcomes)
        disagreement = set(exact_disagreement(h, x, ball, A, settings.grid_resolution).outcomes)
        expected = set(range(A)) - reach if len(reach) == 1 else set(range(A))
        checked += 1
        if disagreement != expected:
            return CheckResult(name="reach_disagreement_relation", success=False, checked=checked,
                               witness={"reach": sorted(reach), "disagreement": sorted(disagreement)})
    return CheckResult(name="reach_disagreement_relation", success=True, checked=checked)


def check_reach_monotone(settings: VerifySettings) -> CheckResult:
    rng = np.random.default_rng([settings.seed, 16])
    checked = 0
    for _ in range(settings.trials):
        h = _linear_model(rng, 1, 2)
        x = rng.normal(size=1)
        previous: set = set()
        for gamma in np.linspace(0.0, 2.0, 9):
            reach = set(exact_reachability(h, x, PerturbationBall(p=2, gamma=float(gamma)),
                                           settings.grid_resolution).outcomes)
            checked += 1
            if not previous <= reach:
                return CheckResult(name="reachability_monotone", success=False, checked=checked,
                                   witness={"gamma": float(gamma), "previous": sorted(previous), "reach": sorted(reach)})
            previous = reach
    return CheckResult(name="reachability_monotone", success=True, checked=checked)


def check_calibration(settings: VerifySettings) -> CheckResult:
    rng = np.random.default_rng([settings.seed, 17])
    checked = 0
    for _ in range(settings.trials):
        inst = DiscreteInstance.random(rng, num_points=1, action_count=2)
        h = _linear_model(rng, 1, 2)
        params = SurrogateParams(u=float(rng.choice([0.5, 1.0, 2.0])), rho=float(rng.uniform(0.25, 2.0)))
        ball = PerturbationBall(p=2, gamma=float(rng.uniform(0.0, 1.0)))
        gap = calibration_gap_check(inst, h, params, ball, 0, settings.grid_resolution)
        checked += 1
        if not gap.holds:
            return CheckResult(name="calibration_gap", success=False, checked=checked, witness=gap.model_dump())
    return CheckResult(name="calibration_gap", success=True, checked=checked)


def _epoch_instance(n: int, A: int, seed: int) -> Tuple[Dataset, int]:
    """Training set and class count K for an epoch over |A| actions; |A| = 2 pairs one class with one expert."""
    if A == 2:
        features = np.random.default_rng([seed, 18]).normal(size=(n, 2))
        return Dataset(features, np.zeros(n, dtype=int), "classification", np.arange(n), np.array([], dtype=int),
                       num_classes=1), 1
    return gen_blobs(K=2, d=2, n=max(n, 2), separation=3.0, seed=seed, train_fraction=1.0), 2


def check_epoch_cost(settings: VerifySettings) -> CheckResult:
    """One instrumented RERM-C epoch per (n, |A|, T) shape."""
    audits = []
    for n, A, T_steps in settings.epoch_shapes:
        dataset, K = _epoch_instance(n, A, settings.seed)
        n = dataset.n
        J = A - K
        panel = ExpertPanel([ExpertSpec(kind="class_bernoulli", id=e + 1) for e in range(J)])
        sample_expert_outputs(panel, dataset, settings.seed)
        cm = CostModel.for_classification(K, np.linspace(0.05, 0.1, J).tolist(), alpha=0.9)
        counter = PassCounter()
        train_rerm_c(ScoreModel(2, A, seed=settings.seed), dataset, panel, cm,
                     SurrogateParams(kappa=1.0), PerturbationBall(p=2, gamma=0.5),
                     AttackPlan(steps=T_steps, restarts=0),
                     TrainConfig(epochs=1, batch_size=4, monitor_size=0, seed=settings.seed), counter=counter)
        audit = audit_epoch_cost(counter, n, A, T_steps)
        audits.append({"n": n, "actions": A, "steps": T_steps, **audit.model_dump()})
    return CheckResult(name="epoch_cost_audit", success=all(a["success"] for a in audits), checked=len(audits),
                       details={"shapes": audits})


CHECKS: List[Callable[[VerifySettings], CheckResult]] = [
    lambda s: check_constants(),
    check_gradients,
    check_reductions,
    lambda s: exhaustive_true_loss_check(),
    check_smooth_bound,
    check_bayes_identity,
    check_reach_disagreement,
    check_reach_monotone,
    check_calibration,
    check_epoch_cost,
]


# ---------------------------------------------------------------------------
# suite
# ---------------------------------------------------------------------------

def run_verification(settings: Optional[VerifySettings] = None,
                     output_path: Optional[str] = None,
                     config_hash: str = "") -> Dict[str, Any]:
    """
    Run every oracle check.

    Args:
        settings (Optional[VerifySettings]): Instance counts, epoch shapes, grid resolution and seed
        output_path (Optional[str]): Where to save the result JSON
        config_hash (str): Hash of the experiment config

    Returns:
        Dict[str, Any]: success, statistics, failed_checks and all checks
    """
    settings = settings or VerifySettings()
    logger.info(f"Running verification suite ({settings.gradient_configs} gradient configurations, "
                f"{settings.reduction_instances} reductions, {settings.smooth_bound_tuples} bound tuples, "
                f"{settings.bayes_instances} Bayes instances, {len(settings.epoch_shapes)} epoch shapes)")
    checks: List[CheckResult] = []
    for check in CHECKS:
        try:
            result = check(settings)
        except Exception as e:
            logger.error(f"Verification check raised: {e}")
            raise
        logger.info(f"{result.name}: {'passed' if result.success else 'FAILED'} ({result.checked} cases)")
        checks.append(result)

    passed = sum(c.success for c in checks)
    results = {
        "suite_name": "deferkit_oracles",
        "config_hash": config_hash,
        "success": passed == len(checks),
        "statistics": {
            "evaluated_checks": len(checks),
            "successful_checks": passed,
            "unsuccessful_checks": len(checks) - passed,
            "success_percent": 100.0 * passed / len(checks),
        },
        "failed_checks": [c.model_dump() for c in checks if not c.success],
        "checks": [c.model_dump() for c in checks],
    }

    if output_path:
        directory = os.path.dirname(output_path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(output_path, "w") as f:
            json.dump(results, f, indent=2, sort_keys=True)
        logger.info(f"Verification results saved to: {output_path}")
    return results


def format_verification_summary(results: Dict[str, Any]) -> str:
    """Plain-text summary of a verification result."""
    stats = results.get("statistics", {})
    lines = [
        f"Verification: {results.get('suite_name', 'unknown suite')}",
        f"Status: {'PASSED' if results.get('success') else 'FAILED'}",
        f"- Total checks: {stats.get('evaluated_checks', 0)}",
        f"- Passed checks: {stats.get('successful_checks', 0)}",
        f"- Failed checks: {stats.get('unsuccessful_checks', 0)}",
        f"- Success rate: {stats.get('success_percent', 0):.1f}%",
    ]
    for i, check in enumerate(results.get("failed_checks", [])):
        lines.append(f"{i + 1}. {check.get('name')}: witness {check.get('witness')}")
    return "\n".join(lines)
