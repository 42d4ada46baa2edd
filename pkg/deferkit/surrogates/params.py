"""
Surrogate hyperparameters and action spaces.
"""
import math
from typing import Literal

from pydantic import BaseModel, Field, model_validator

from deferkit.errors import ConfigurationError


class SurrogateParams(BaseModel):
    """Family index u, margin scale rho and smooth penalty weight kappa."""
    u: float = Field(1.0, gt=0, description="Comp-sum family index")
    rho: float = Field(1.0, gt=0, description="Margin scale")
    kappa: float = Field(0.0, ge=0, description="Weight of the margin-deviation penalty")
    certified: bool = Field(False, description="Require kappa >= sqrt(|A|-1)/rho")

    @staticmethod
    def certified_kappa(action_count: int, rho: float) -> float:
        """Smallest kappa for which the smooth loss upper-bounds the margin loss."""
        return math.sqrt(action_count - 1) / rho

    def check(self, action_count: int) -> None:
        if self.certified and self.kappa < self.certified_kappa(action_count, self.rho) - 1e-12:
            raise ConfigurationError("invalid loss block", [
                f"kappa={self.kappa:g} is below sqrt(|A|-1)/rho="
                f"{self.certified_kappa(action_count, self.rho):g} with certified=true"])


class ActionSpace(BaseModel):
    """Augmented action space: K classes + J experts, or predictor + J experts."""
    kind: Literal["classification", "regression"]
    K: int = Field(0, ge=0)
    J: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _at_least_two(self):
        if self.size < 2:
            raise ValueError(f"action space needs at least two actions, got {self.size}")
        return self

    @property
    def size(self) -> int:
        return self.K + self.J if self.kind == "classification" else self.J + 1

    def is_deferral(self, action: int) -> bool:
        return action >= self.K if self.kind == "classification" else action >= 1

    def expert_of(self, action: int) -> int:
        """0-based expert position behind a deferral action."""
        return action - self.K if self.kind == "classification" else action - 1
