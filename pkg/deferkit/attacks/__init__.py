"""
Perturbation balls, projected gradient ascent and attacks on deferral systems.
"""
from .ball import AttackPlan, PerturbationBall, ball_candidates, candidate_offsets, project, random_in_ball
from .pgd import pgd_ascend
from .proxies import (OutcomeProxySet, ProxyCache, candidate_points, dump_adversarial,
                      margin_deviation_table, margin_surrogate_table, outcome_proxies,
                      penalty_sups, predictor_ascent, predictor_worst_case,
                      reachable_outcomes, search_outcomes, surrogate_sups)
from .threats import clean_surrogate_objective, targeted_attack, untargeted_attack

__all__ = [
    "AttackPlan", "PerturbationBall", "ball_candidates", "candidate_offsets", "project", "random_in_ball",
    "pgd_ascend",
    "OutcomeProxySet", "ProxyCache", "candidate_points", "dump_adversarial",
    "margin_deviation_table", "margin_surrogate_table", "outcome_proxies", "penalty_sups",
    "predictor_ascent", "predictor_worst_case", "reachable_outcomes", "search_outcomes",
    "surrogate_sups",
    "clean_surrogate_objective", "targeted_attack", "untargeted_attack",
]
