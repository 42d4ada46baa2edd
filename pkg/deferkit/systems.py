"""
Model bundles that make up a deferral system.
"""
from typing import Dict

from deferkit.diffcore.model import ScoreModel
from deferkit.errors import ContractViolation
from deferkit.surrogates.params import ActionSpace


class ClassificationSystem:
    """A classifier h scoring K classes and J deferral actions."""

    task = "classification"

    def __init__(self, h: ScoreModel, num_classes: int, num_experts: int):
        if h.output_dim != num_classes + num_experts:
            raise ContractViolation(f"h has {h.output_dim} outputs, expected K+J={num_classes + num_experts}")
        self.h = h
        self.num_classes = num_classes
        self.num_experts = num_experts

    @property
    def actions(self) -> ActionSpace:
        return ActionSpace(kind="classification", K=self.num_classes, J=self.num_experts)

    @property
    def policy(self) -> ScoreModel:
        return self.h

    def models(self) -> Dict[str, ScoreModel]:
        return {"h": self.h}

    def clone(self) -> "ClassificationSystem":
        return ClassificationSystem(self.h.clone(), self.num_classes, self.num_experts)


class RegressionSystem:
    """A rejector r over J+1 actions and a predictor f."""

    task = "regression"

    def __init__(self, r: ScoreModel, f: ScoreModel, num_experts: int):
        if r.output_dim != num_experts + 1:
            raise ContractViolation(f"r has {r.output_dim} outputs, expected J+1={num_experts + 1}")
        if r.input_dim != f.input_dim:
            raise ContractViolation("rejector and predictor must share the input dimension")
        self.r = r
        self.f = f
        self.num_experts = num_experts

    @property
    def actions(self) -> ActionSpace:
        return ActionSpace(kind="regression", J=self.num_experts)

    @property
    def policy(self) -> ScoreModel:
        return self.r

    def models(self) -> Dict[str, ScoreModel]:
        return {"r": self.r, "f": self.f}

    def clone(self) -> "RegressionSystem":
        return RegressionSystem(self.r.clone(), self.f.clone(), self.num_experts)


def system_from_models(task: str, models: Dict[str, ScoreModel], num_classes: int, num_experts: int):
    """Rebuild a system from checkpointed models."""
    if task == "classification":
        return ClassificationSystem(models["h"], num_classes, num_experts)
    return RegressionSystem(models["r"], models["f"], num_experts)
