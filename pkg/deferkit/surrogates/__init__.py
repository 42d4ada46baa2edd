"""
Deferral losses: transform families, clean surrogates, adversarial true
losses, adversarial margin surrogates and their smooth relaxations.
"""
from .transforms import (psi_exp_rho, psi_rho, psi_u, psi_u_at_one,
                         regression_bound_factor)
from .params import ActionSpace, SurrogateParams
from .clean import (class_surrogate_weights, comp_sum_matrix, cost_weighted_class_batch,
                    margin_deviation_batch, phi_cls_rho_u, phi_cls_u, phi_rho_u_batch,
                    phi_u_batch, regression_surrogate_batch, surrogate_class_batch,
                    surrogate_def_class, surrogate_def_reg, surrogate_def_reg_from_costs,
                    true_def_loss_class, true_def_loss_reg, weighted_comp_sum,
                    weighted_def_class)
from .adversarial import (adv_surrogate_def_class, adv_surrogate_def_reg,
                          adv_true_def_loss_class, adv_true_def_loss_reg,
                          adversarial_reg_costs, smooth_adv_cls, smooth_adv_def_class,
                          smooth_adv_def_reg)
from .smooth import smooth_class_batch, smooth_reg_batch, smooth_terms_batch

__all__ = [
    "psi_exp_rho", "psi_rho", "psi_u", "psi_u_at_one", "regression_bound_factor",
    "ActionSpace", "SurrogateParams",
    "class_surrogate_weights", "comp_sum_matrix", "cost_weighted_class_batch",
    "margin_deviation_batch", "phi_cls_rho_u", "phi_cls_u", "phi_rho_u_batch", "phi_u_batch",
    "regression_surrogate_batch", "surrogate_class_batch", "surrogate_def_class",
    "surrogate_def_reg", "surrogate_def_reg_from_costs", "true_def_loss_class",
    "true_def_loss_reg", "weighted_comp_sum", "weighted_def_class",
    "adv_surrogate_def_class", "adv_surrogate_def_reg", "adv_true_def_loss_class",
    "adv_true_def_loss_reg", "adversarial_reg_costs", "smooth_adv_cls",
    "smooth_adv_def_class", "smooth_adv_def_reg",
    "smooth_class_batch", "smooth_reg_batch", "smooth_terms_batch",
]
