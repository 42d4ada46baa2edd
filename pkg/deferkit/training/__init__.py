"""
Robust and clean trainers, the Adam optimizer and epoch pass accounting.
"""
from .optimizer import Adam
from .audit import EpochAudit, PassCounter, audit_epoch_cost
from .trainer import TrainConfig, train_baseline, train_rerm_c, train_rerm_r

__all__ = [
    "Adam",
    "EpochAudit", "PassCounter", "audit_epoch_cost",
    "TrainConfig", "train_baseline", "train_rerm_c", "train_rerm_r",
]
