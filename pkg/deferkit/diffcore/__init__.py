"""
Dense float64 arithmetic with reverse-mode differentiation, score models
and checkpoints.
"""
from .tensor import Node, backward, constant, variable
from .model import (CHECKPOINT_VERSION, ScoreModel, forward, grad_wrt_input,
                    grad_wrt_models, grad_wrt_params, load_checkpoint,
                    save_checkpoint)
from .gradcheck import finite_diff_check

__all__ = [
    "Node", "backward", "constant", "variable",
    "CHECKPOINT_VERSION", "ScoreModel", "forward", "grad_wrt_input",
    "grad_wrt_models", "grad_wrt_params", "load_checkpoint", "save_checkpoint",
    "finite_diff_check",
]
