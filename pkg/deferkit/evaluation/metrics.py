"""
Clean, untargeted and targeted evaluation of deferral systems.

Accuracy counts a deferred example as correct when the consulted expert is
correct. Def.Loss is a candidate-set estimate of the adversarial true deferral loss:
every outcome decided at some evaluated point of an example's ball is charged
its cost, so the estimate is a lower bound of the exact value.
"""
import logging
from typing import Dict, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, Field, model_validator

from deferkit.agents.costs import CostModel, expert_costs_reg, regression_costs, shifted_costs
from deferkit.agents.experts import ExpertPanel
from deferkit.attacks.ball import AttackPlan, PerturbationBall
from deferkit.attacks.proxies import predictor_worst_case, reachable_outcomes
from deferkit.attacks.threats import targeted_attack, untargeted_attack
from deferkit.errors import ConfigurationError, ContractViolation
from deferkit.evaluation.decisions import class_correct, decide_class, decide_reg, rmse
from deferkit.surrogates.params import SurrogateParams
from deferkit.systems import ClassificationSystem, RegressionSystem

logger = logging.getLogger(__name__)

ATTACK_MODES = ("clean", "untargeted", "targeted")

System = Union[ClassificationSystem, RegressionSystem]


class DeferralRecord(BaseModel):
    """Outcome of one example under one attack mode."""
    example_id: int
    decision: int = Field(..., ge=0, description="Action index")
    deferred_to: Optional[int] = Field(None, ge=1, description="Expert id when the decision defers")
    realized_cost: float
    correct: Optional[bool] = None
    attack: str = "none"


class MetricReport(BaseModel):
    """Metrics of one evaluation run; accuracies in percent, RMSE in target units."""
    task: Literal["classification", "regression"]
    attack_mode: Literal["clean", "untargeted", "targeted", "summary"]
    metric: Literal["accuracy", "rmse"]
    nu: Optional[int] = Field(None, description="Action forced by the targeted attack")
    c_metric: Optional[float] = None
    u_metric: Optional[float] = None
    t_metric: Optional[float] = None
    targeted_success: Optional[float] = Field(None, description="Fraction of examples sent to nu")
    def_loss: float = Field(..., description="Sampled estimate of the adversarial true deferral loss (lower bound)")
    mean_cost: Optional[float] = Field(None, description="Mean realized cost at the inputs the system saw")
    deferral_rate: Dict[str, float] = Field(default_factory=dict)
    n: int = Field(..., ge=0)
    config_hash: str = ""
    records: List[DeferralRecord] = Field(default_factory=list, exclude=True)

    @model_validator(mode="after")
    def _consistent(self):
        for name in ("c_metric", "u_metric", "t_metric"):
            value = getattr(self, name)
            if value is None:
                continue
            if self.metric == "accuracy" and not -1e-9 <= value <= 100.0 + 1e-9:
                raise ValueError(f"{name}={value} is not a percentage")
            if self.metric == "rmse" and value < 0:
                raise ValueError(f"{name}={value} is a negative RMSE")
        if self.n > 0 and self.deferral_rate and abs(sum(self.deferral_rate.values()) - 1.0) > 1e-9:
            raise ValueError(f"deferral rates sum to {sum(self.deferral_rate.values())}, not 1")
        return self

    @property
    def metric_for_mode(self) -> Optional[float]:
        return {"clean": self.c_metric, "untargeted": self.u_metric, "targeted": self.t_metric}.get(self.attack_mode)


def _deferral_rates(actions: np.ndarray, first_expert_action: int, num_experts: int) -> Dict[str, float]:
    n = max(actions.size, 1)
    rates = {"pred": float(np.sum(actions < first_expert_action)) / n}
    for e in range(num_experts):
        rates[f"e{e + 1}"] = float(np.sum(actions == first_expert_action + e)) / n
    return rates


def resolve_nu(nu: Optional[int], action_count: int) -> int:
    if nu is None:
        return action_count - 1
    if not 0 <= nu < action_count:
        raise ConfigurationError("invalid targeted attack", [f"nu={nu} outside 0..{action_count - 1}"])
    return int(nu)


def _attacked_inputs(system: System, X, targets, m, cm, attack_mode, ball, plan, params, nu):
    if attack_mode == "clean":
        return X.copy(), None
    if attack_mode == "untargeted":
        return untargeted_attack(system, X, targets, m, cm, params, ball, plan), None
    return targeted_attack(system.policy, X, nu, ball, plan, u=params.u)


def evaluate(system: System,
             dataset,
             panel: ExpertPanel,
             cm: CostModel,
             attack_mode: str = "clean",
             ball: Optional[PerturbationBall] = None,
             plan: Optional[AttackPlan] = None,
             params: Optional[SurrogateParams] = None,
             nu: Optional[int] = None,
             split: str = "test",
             config_hash: str = "") -> MetricReport:
    """
    Attack, decide and score every example of a split.

    Args:
        system (System): Trained classification or regression system
        dataset (Dataset): Data the panel was sampled on
        panel (ExpertPanel): Expert outputs
        cm (CostModel): Costs
        attack_mode (str): "clean", "untargeted" or "targeted"
        ball (Optional[PerturbationBall]): Threat model; defaults to a zero-radius ball
        plan (Optional[AttackPlan]): Attack configuration
        params (Optional[SurrogateParams]): u of the attack objectives
        nu (Optional[int]): Targeted action; defaults to the last expert action
        split (str): "train", "test" or "all"
        config_hash (str): Hash of the experiment config

    Returns:
        MetricReport: Metric of the mode (clean metric always filled), Def.Loss,
        mean cost and deferral composition, with per-example records attached
    """
    if attack_mode not in ATTACK_MODES:
        raise ConfigurationError("invalid attack mode", [f"attack_mode must be one of {ATTACK_MODES}"])
    if system.task != dataset.task:
        raise ContractViolation(f"system is for {system.task}, dataset is {dataset.task}")
    ball = ball or PerturbationBall()
    plan = plan or AttackPlan()
    params = params or SurrogateParams()
    policy = system.policy
    A = policy.output_dim
    target_action = resolve_nu(nu, A) if attack_mode == "targeted" else None

    idx, X, targets = dataset.split(split)
    if idx.size == 0:
        raise ContractViolation(f"split {split!r} is empty")
    m = panel.outputs(idx)
    adv, success = _attacked_inputs(system, X, targets, m, cm, attack_mode, ball, plan, params, target_action)
    n = int(idx.size)
    logger.info(f"Evaluating {system.task} system: mode={attack_mode}, n={n}, gamma={ball.gamma}")

    reach = reachable_outcomes(policy, X, ball, plan, params, extra_points=adv[:, None, :],
                               search=ball.gamma > 0)
    attack_label = "none" if attack_mode == "clean" else (
        "untargeted" if attack_mode == "untargeted" else f"targeted({target_action})")

    if system.task == "classification":
        K = cm.num_classes
        clean_actions = np.asarray(decide_class(system.h, X), dtype=int).reshape(n)
        actions = np.asarray(decide_class(system.h, adv), dtype=int).reshape(n)
        mu = shifted_costs(cm, targets, m)
        correct = class_correct(actions, targets, m, K)
        clean_metric = 100.0 * float(np.mean(class_correct(clean_actions, targets, m, K)))
        metric = 100.0 * float(np.mean(correct))
        realized = mu[np.arange(n), actions]
        def_loss = np.sum(mu * reach, axis=1)
        records = [DeferralRecord(example_id=int(idx[i]), decision=int(actions[i]),
                                  deferred_to=int(actions[i] - K + 1) if actions[i] >= K else None,
                                  realized_cost=float(realized[i]), correct=bool(correct[i]),
                                  attack=attack_label) for i in range(n)]
        rates = _deferral_rates(actions, K, cm.num_experts)
        metric_name = "accuracy"
    else:
        _, clean_out = decide_reg(system.r, system.f, X, m)
        actions, outputs = decide_reg(system.r, system.f, adv, m)
        clean_metric = rmse(clean_out, targets)
        metric = rmse(outputs, targets)
        realized = regression_costs(cm, system.f.scores(adv), m, targets)[np.arange(n), actions]
        worst = predictor_worst_case(system.f, X, targets, ball, plan, cm.base_loss,
                                     extra_points=adv[:, None, :], search=ball.gamma > 0)
        costs = np.concatenate([(cm.alphas[0] * worst + cm.betas[0])[:, None],
                                expert_costs_reg(cm, m, targets)], axis=1)
        def_loss = np.sum(costs * reach, axis=1)
        records = [DeferralRecord(example_id=int(idx[i]), decision=int(actions[i]),
                                  deferred_to=int(actions[i]) if actions[i] >= 1 else None,
                                  realized_cost=float(realized[i]), attack=attack_label) for i in range(n)]
        rates = _deferral_rates(actions, 1, cm.num_experts)
        metric_name = "rmse"

    report = MetricReport(
        task=system.task,
        attack_mode=attack_mode,
        metric=metric_name,
        nu=target_action,
        c_metric=clean_metric,
        u_metric=metric if attack_mode == "untargeted" else None,
        t_metric=metric if attack_mode == "targeted" else None,
        targeted_success=float(np.mean(success)) if success is not None else None,
        def_loss=float(np.mean(def_loss)),
        mean_cost=float(np.mean(realized)),
        deferral_rate=rates,
        n=n,
        config_hash=config_hash,
        records=records,
    )
    logger.info(f"{attack_mode}: metric={metric:.4f}, def_loss={report.def_loss:.4f}")
    return report


def summarize_reports(reports: List[MetricReport]) -> MetricReport:
    """
    Merge per-mode reports of one run into a single row (C, U, T, Def.Loss).

    Def.Loss is the largest per-mode estimate, since each is a lower bound of
    the same quantity. Deferral rates and mean cost come from the clean report.
    """
    if not reports:
        raise ContractViolation("nothing to summarize")
    by_mode = {r.attack_mode: r for r in reports}
    first = reports[0]
    clean = by_mode.get("clean", first)
    return MetricReport(
        task=first.task,
        attack_mode="summary",
        metric=first.metric,
        nu=by_mode["targeted"].nu if "targeted" in by_mode else None,
        c_metric=clean.c_metric,
        u_metric=by_mode["untargeted"].u_metric if "untargeted" in by_mode else None,
        t_metric=by_mode["targeted"].t_metric if "targeted" in by_mode else None,
        targeted_success=by_mode["targeted"].targeted_success if "targeted" in by_mode else None,
        def_loss=max(r.def_loss for r in reports),
        mean_cost=clean.mean_cost,
        deferral_rate=clean.deferral_rate,
        n=first.n,
        config_hash=first.config_hash,
    )
