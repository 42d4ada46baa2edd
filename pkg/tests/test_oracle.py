"""
Tests for the exact oracles and the verification suite
"""
import os
import sys
import json
import math
import pytest
import numpy as np

# Add the project root to the path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from deferkit.attacks import PerturbationBall
from deferkit.diffcore import ScoreModel
from deferkit.errors import ContractViolation, UnsupportedDimensionError
from deferkit.oracle import (DiscreteInstance, VerifySettings, ball_grid, bayes_conditional_risk,
                             calibration_gap_check, exact_disagreement, exact_reachability,
                             exhaustive_true_loss_check, format_verification_summary, run_verification,
                             staircase_infimum)
from deferkit.surrogates import SurrogateParams


@pytest.fixture
def threshold_policy():
    """Three actions on the line: 0 right of the origin, 1 left of it, 2 never."""
    return ScoreModel.from_arrays([[[1.0], [-1.0], [0.0]]], [[0.0, 0.0, -100.0]])


def constant_policy(A, action):
    """Input-independent policy that always picks ``action``."""
    bias = np.zeros(A)
    bias[action] = 1.0
    return ScoreModel.from_arrays([np.zeros((A, 1))], [bias])


def test_bayes_risk_and_ties():
    """The Bayes action is the cheapest, lowest index on ties."""
    inst = DiscreteInstance([[0.0], [1.0]], [[0.3, 0.1, 0.1], [0.0, 0.5, 0.2]])
    assert bayes_conditional_risk(inst, 0) == (0.1, 1)
    assert bayes_conditional_risk(inst, [1.0]) == (0.0, 0)


def test_instance_validation():
    """Negative costs and unknown points are rejected."""
    with pytest.raises(ContractViolation):
        DiscreteInstance([[0.0]], [[-0.1, 0.2]])
    inst = DiscreteInstance([[0.0]], [[0.1, 0.2]])
    with pytest.raises(ContractViolation):
        inst.index_of([0.5])


def test_constant_bayes_policy_reaches_only_its_action():
    """A constant policy on the Bayes action attains the Bayes risk at any radius."""
    inst = DiscreteInstance([[0.2]], [[0.4, 0.1, 0.9]])
    value, action = bayes_conditional_risk(inst, 0)
    reach = exact_reachability(constant_policy(3, action), inst.points[0], PerturbationBall(gamma=0.8), 201)
    assert reach.outcomes == [action]
    assert inst.cond_costs[0, reach.outcomes].sum() == value


def test_reachability_of_threshold(threshold_policy):
    """A ball across the threshold reaches both sides; a small one only its own."""
    assert exact_reachability(threshold_policy, np.array([0.1]), PerturbationBall(gamma=0.3)).outcomes == [0, 1]
    assert exact_reachability(threshold_policy, np.array([0.1]), PerturbationBall(gamma=0.05)).outcomes == [0]


def test_reachability_in_two_dimensions():
    """An l-inf box around the corner of two regions reaches both."""
    policy = ScoreModel.from_arrays([[[1.0, 0.0], [0.0, 1.0]]], [[0.0, 0.0]])
    reach = exact_reachability(policy, np.array([0.1, 0.0]), PerturbationBall(p="inf", gamma=0.2), 101)
    assert reach.outcomes == [0, 1]
    assert reach.points_evaluated == 101 * 101 + 1


def test_box_limits_reachability(threshold_policy):
    """Clipping to [0, 1] keeps the ball on the right side; the tie at 0 goes to action 0."""
    ball = PerturbationBall(gamma=0.3, box=(0.0, 1.0))
    assert exact_reachability(threshold_policy, np.array([0.1]), ball, 301).outcomes == [0]


def test_exact_enumeration_stops_above_two_dimensions():
    """Three input dimensions are refused."""
    policy = ScoreModel(3, 2, seed=0)
    with pytest.raises(UnsupportedDimensionError):
        exact_reachability(policy, np.zeros(3), PerturbationBall(gamma=0.1))
    with pytest.raises(UnsupportedDimensionError):
        ball_grid(np.zeros(3), PerturbationBall(gamma=0.1))


def test_disagreement_follows_reachability(threshold_policy):
    """One reachable outcome k: disagreement is everything but k. Two: everything."""
    narrow = exact_disagreement(threshold_policy, np.array([1.0]), PerturbationBall(gamma=0.1), 3, 201)
    assert narrow.outcomes == [1, 2]
    wide = exact_disagreement(threshold_policy, np.array([0.1]), PerturbationBall(gamma=0.3), 3, 201)
    assert wide.outcomes == [0, 1, 2]


def test_reachability_grows_with_radius(threshold_policy):
    """Reachable sets are nested in gamma."""
    previous = set()
    for gamma in np.linspace(0.0, 1.0, 6):
        reach = set(exact_reachability(threshold_policy, np.array([0.3]), PerturbationBall(gamma=gamma), 201).outcomes)
        assert previous <= reach
        previous = reach
    assert previous == {0, 1}


def test_shifted_costs_match_case_formula():
    """Exhaustive enumeration agrees with the per-case deferral loss."""
    result = exhaustive_true_loss_check(max_classes=3, max_experts=2, alpha=0.8, expert_fees=[0.05, 0.1])
    assert result.success
    assert result.checked > 0


def test_exhaustive_check_finds_broken_costs():
    """An implementation that ignores the costs is caught with a witness."""
    result = exhaustive_true_loss_check(shifted_cost_fn=lambda cm, y, m: np.zeros((1, cm.action_count)))
    assert not result.success
    assert result.witness is not None


def test_staircase_infimum():
    """Largest weight on top: 3 psi(0) + 1 psi(1) = log 2."""
    assert staircase_infimum(np.array([1.0, 3.0]), 1.0) == pytest.approx(math.log(2.0))
    assert staircase_infimum(np.array([2.0, 2.0, 2.0]), 1.0) == pytest.approx(2.0 * (math.log(2.0) + math.log(3.0)))


def test_calibration_gap_of_bayes_policy():
    """The Bayes policy has no true gap."""
    inst = DiscreteInstance([[0.0]], [[0.2, 0.7]])
    gap = calibration_gap_check(inst, constant_policy(2, 0), SurrogateParams(), PerturbationBall(gamma=0.3), 0, 201)
    assert gap.true_gap == 0.0
    assert gap.holds
    assert gap.psi_u_one == pytest.approx(math.log(2.0))


def test_calibration_gap_of_wrong_policy():
    """Always picking the expensive action: true gap 0.5 and the inequality still holds."""
    inst = DiscreteInstance([[0.0]], [[0.2, 0.7]])
    gap = calibration_gap_check(inst, constant_policy(2, 1), SurrogateParams(), PerturbationBall(gamma=0.3), 0, 201)
    assert gap.true_gap == pytest.approx(0.5)
    assert gap.reachable == [1]
    assert gap.holds


def test_calibration_gap_random_linear_policies():
    """The inequality holds for random 1-D two-action linear policies."""
    rng = np.random.default_rng(7)
    for _ in range(10):
        inst = DiscreteInstance.random(rng, 1, 2)
        policy = ScoreModel.from_arrays([rng.normal(size=(2, 1))], [rng.normal(size=2)])
        params = SurrogateParams(u=float(rng.choice([0.5, 1.0, 2.0])), rho=float(rng.uniform(0.25, 2.0)))
        gap = calibration_gap_check(inst, policy, params, PerturbationBall(gamma=float(rng.uniform(0, 1))), 0, 201)
        assert gap.holds


SMALL_SUITE = dict(trials=2, gradient_configs=3, reduction_instances=4, smooth_bound_tuples=5, bayes_instances=2,
                   epoch_shapes=[(10, 4, 5), (1, 2, 1)], grid_resolution=101)


def test_default_suite_sizes():
    settings = VerifySettings()
    assert settings.gradient_configs == 100
    assert settings.reduction_instances == 1000
    assert settings.smooth_bound_tuples == 1000
    assert settings.bayes_instances == 100
    assert settings.epoch_shapes == [(10, 4, 5), (1, 2, 1), (32, 5, 10)]


def test_epoch_shape_validation():
    with pytest.raises(ValueError):
        VerifySettings(epoch_shapes=[(10, 1, 5)])


def test_run_verification(tmp_path):
    """A small suite passes, saves its document and summarizes."""
    path = str(tmp_path / "verification.json")
    results = run_verification(VerifySettings(**SMALL_SUITE), path, config_hash="feedbeef0000")
    assert results["success"], results["failed_checks"]
    assert results["statistics"]["evaluated_checks"] == len(results["checks"])
    assert results["statistics"]["success_percent"] == 100.0
    with open(path) as f:
        saved = json.load(f)
    assert saved["config_hash"] == "feedbeef0000"
    assert {c["name"] for c in saved["checks"]} >= {"psi_constants", "epoch_cost_audit", "calibration_gap"}
    summary = format_verification_summary(results)
    assert "Status: PASSED" in summary


def test_verification_reports_instance_counts(tmp_path):
    """The saved document records how many cases each check covered."""
    path = str(tmp_path / "verification.json")
    run_verification(VerifySettings(**SMALL_SUITE), path)
    with open(path) as f:
        checks = {c["name"]: c for c in json.load(f)["checks"]}
    assert checks["gradient_finite_differences"]["checked"] == 4 * 3
    assert checks["gradient_finite_differences"]["details"]["configurations"] == 3
    assert checks["gamma_zero_reduction"]["checked"] == 5 * 4
    assert checks["gamma_zero_reduction"]["details"]["instances"] == 4
    assert checks["smooth_upper_bound"]["checked"] == 5
    assert checks["bayes_identity"]["details"]["instances"] == 2
    assert checks["bayes_identity"]["checked"] == 3 * 2
    shapes = checks["epoch_cost_audit"]["details"]["shapes"]
    assert [(s["n"], s["actions"], s["steps"]) for s in shapes] == [(10, 4, 5), (1, 2, 1)]
    assert all(s["success"] and s["forwards"] == s["expected"] for s in shapes)
    assert shapes[1]["expected"] == 1 * (1 + 2 * 1)


@pytest.mark.slow
def test_full_default_suite(tmp_path):
    """The default sizes pass and are reported as configured."""
    path = str(tmp_path / "verification.json")
    results = run_verification(VerifySettings(), path)
    assert results["success"], results["failed_checks"]
    checks = {c["name"]: c for c in results["checks"]}
    assert checks["gradient_finite_differences"]["details"]["configurations"] == 100
    assert checks["gamma_zero_reduction"]["details"]["instances"] == 1000
    assert checks["smooth_upper_bound"]["details"]["tuples"] == 1000
    assert checks["bayes_identity"]["details"]["instances"] == 100
    assert len(checks["epoch_cost_audit"]["details"]["shapes"]) == 3
