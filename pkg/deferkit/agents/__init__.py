"""
Simulated expert panels and deferral costs.
"""
from .experts import (ExpertPanel, ExpertSpec, FeatureRegion, export_cache,
                      sample_expert_outputs)
from .costs import (CostModel, cost_class, cost_reg, cost_reg_pred_adv,
                    expert_costs_reg, regression_costs, regression_loss,
                    regression_loss_node, shifted_costs, tau_weights)

__all__ = [
    "ExpertPanel", "ExpertSpec", "FeatureRegion", "export_cache", "sample_expert_outputs",
    "CostModel", "cost_class", "cost_reg", "cost_reg_pred_adv", "expert_costs_reg",
    "regression_costs", "regression_loss", "regression_loss_node", "shifted_costs",
    "tau_weights",
]
