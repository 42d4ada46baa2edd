"""
Oracles: exact reachability on small instances, brute-force loss checks and the verification suite.
"""
from .instances import DiscreteInstance, bayes_conditional_risk
from .reachability import DEFAULT_RESOLUTION, OutcomeSet, ball_grid, exact_disagreement, exact_reachability
from .checks import (CalibrationGap, CheckResult, calibration_gap_check, deferral_loss_reference,
                     exhaustive_true_loss_check, staircase_infimum)
from .verify import VerifySettings, format_verification_summary, run_verification

__all__ = [
    "DiscreteInstance", "bayes_conditional_risk",
    "DEFAULT_RESOLUTION", "OutcomeSet", "ball_grid", "exact_disagreement", "exact_reachability",
    "CalibrationGap", "CheckResult", "calibration_gap_check", "deferral_loss_reference",
    "exhaustive_true_loss_check", "staircase_infimum",
    "VerifySettings", "format_verification_summary", "run_verification",
]
