"""
Tests for the deferral losses and their surrogates
"""
import os
import sys
import math
import pytest
import numpy as np

# Add the project root to the path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from deferkit.agents import CostModel, cost_reg, cost_reg_pred_adv, tau_weights
from deferkit.attacks import AttackPlan, PerturbationBall, ball_candidates
from deferkit.diffcore import ScoreModel
from deferkit.diffcore import tensor as T
from deferkit.diffcore.gradcheck import finite_diff_check
from deferkit.errors import ConfigurationError, DomainError
from deferkit.oracle import exact_reachability
from deferkit.surrogates import (SurrogateParams, adv_surrogate_def_class, adv_surrogate_def_reg,
                                 adv_true_def_loss_class, adv_true_def_loss_reg, phi_cls_rho_u, phi_cls_u,
                                 psi_exp_rho, psi_rho, psi_u, psi_u_at_one, regression_bound_factor,
                                 smooth_adv_cls, smooth_adv_def_class, smooth_adv_def_reg, smooth_class_batch,
                                 surrogate_def_class, surrogate_def_reg, surrogate_def_reg_from_costs,
                                 true_def_loss_class, true_def_loss_reg, weighted_def_class)

LOG3 = math.log(3.0)


@pytest.fixture
def threshold_policy():
    """1-D policy over three actions: 0 right of the origin, 1 left of it, 2 never."""
    return ScoreModel.from_arrays([[[1.0], [-1.0], [0.0]]], [[0.0, 0.0, -100.0]])


@pytest.fixture
def plan():
    """Default ascent settings."""
    return AttackPlan(steps=10)


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------

def test_psi_u_values():
    """log 2 at u=1, 0.5 at u=2 and 0 at v=0."""
    assert psi_u(1.0, 1.0) == pytest.approx(math.log(2.0), abs=1e-12)
    assert psi_u(1.0, 2.0) == pytest.approx(0.5, abs=1e-12)
    for u in (0.5, 1.0, 2.0, 3.0):
        assert psi_u(0.0, u) == 0.0


def test_psi_u_domain():
    """Negative arguments and non-positive u are domain errors."""
    with pytest.raises(DomainError):
        psi_u(-0.1, 1.0)
    with pytest.raises(DomainError):
        psi_u(1.0, 0.0)


def test_psi_rho_values():
    """1 at zero, 0 at rho and 0.5 halfway."""
    assert psi_rho(0.0, 0.7) == 1.0
    assert psi_rho(0.7, 0.7) == 0.0
    assert psi_rho(0.35, 0.7) == pytest.approx(0.5)


def test_exponential_link_dominates_ramp():
    """exp(-v/rho) >= Psi_rho(v) on a grid of margins."""
    v = np.linspace(-3.0, 3.0, 601)
    assert np.all(psi_exp_rho(v, 0.8) >= psi_rho(v, 0.8))


def test_bound_constants():
    """Psi^u(1) and the regression factor max(1, Psi^u(1))."""
    assert psi_u_at_one(1.0) == pytest.approx(math.log(2.0))
    assert regression_bound_factor(1.0) == 1.0
    assert regression_bound_factor(2.0) == 1.0


# ---------------------------------------------------------------------------
# clean classification
# ---------------------------------------------------------------------------

def test_phi_cls_u_examples():
    """All-zero scores give log |A|; [1, 0, 0] on the leader gives log(1 + 2/e)."""
    assert phi_cls_u([0.0, 0.0, 0.0, 0.0], 0, 1.0) == pytest.approx(math.log(4.0), abs=1e-9)
    assert phi_cls_u([1.0, 0.0, 0.0], 0, 1.0) == pytest.approx(math.log(1 + 2 * math.exp(-1)), abs=1e-9)


def test_phi_cls_u_vanishes_for_dominant_target():
    """A score gap of 50 leaves nothing."""
    assert phi_cls_u([50.0, 0.0], 0, 1.0) < 1e-20


def test_phi_cls_rho_u_examples():
    """Zero when the target leads by rho, log 3 when tied or trailing with three actions."""
    params = SurrogateParams(rho=0.5)
    assert phi_cls_rho_u([2.0, 1.0, 1.5], 0, params) == 0.0
    assert phi_cls_rho_u([0.0, 0.0, 0.0], 1, params) == pytest.approx(LOG3)
    assert phi_cls_rho_u([-1.0, 0.0, 0.5], 0, params) == pytest.approx(LOG3)


def test_margin_surrogate_below_scaled_comp_sum():
    """Phi^{rho,u}(s, j) <= Phi^u(s / rho, j) for random scores."""
    rng = np.random.default_rng(0)
    for _ in range(200):
        A = int(rng.integers(2, 6))
        s = rng.normal(0, 2, size=A)
        j = int(rng.integers(0, A))
        params = SurrogateParams(u=float(rng.choice([0.5, 1.0, 2.0])), rho=float(rng.uniform(0.2, 2.0)))
        assert phi_cls_rho_u(s, j, params) <= phi_cls_u(s / params.rho, j, params.u) + 1e-12


def test_true_def_loss_class_examples():
    """Correct class is free, a correct expert costs its fee, a wrong one alpha + fee."""
    cm = CostModel.for_classification(3, [0.05], alpha=1.0, clamp_policy="none")
    assert true_def_loss_class(2, 2, [0], cm) == 0.0
    assert true_def_loss_class(3, 1, [1], cm) == pytest.approx(0.05)
    assert true_def_loss_class(3, 1, [0], cm) == pytest.approx(1.05)
    with pytest.raises(ConfigurationError):
        CostModel.for_classification(3, [0.05], alpha=1.0, clamp_policy="strict")


def test_surrogate_without_experts_is_comp_sum():
    """With J = 0 the deferral surrogate is Phi^u(scores, y)."""
    cm = CostModel.for_classification(3, [])
    scores = [0.3, -1.0, 2.0]
    assert surrogate_def_class(scores, 1, [], cm, 1.0) == pytest.approx(phi_cls_u(scores, 1, 1.0))


def test_expert_terms_vanish_at_unit_cost():
    """An expert with cost 1 contributes nothing."""
    cm = CostModel.for_classification(2, [0.3], alpha=0.7)
    scores = [0.4, 0.1, -0.2]
    assert surrogate_def_class(scores, 0, [1], cm, 1.0) == pytest.approx(phi_cls_u(scores, 0, 1.0))


def test_surrogate_def_class_example():
    """K=2, J=1, zero scores, expert cost 0.3: log 3 + 0.7 log 3."""
    cm = CostModel.for_classification(2, [0.3], alpha=0.7)
    assert surrogate_def_class([0.0, 0.0, 0.0], 0, [0], cm, 1.0) == pytest.approx(1.7 * LOG3, abs=1e-6)


def test_weighted_def_class_uses_tau():
    """The cost-weighted surrogate is sum_j tau_j Phi^u(s, j)."""
    cm = CostModel.for_classification(2, [0.1, 0.2], alpha=0.8)
    scores = np.array([0.5, -0.3, 0.1, 0.0])
    mu = np.array([0.0, 0.8, 0.1, 1.0])
    expected = sum(tau_weights(mu)[j] * phi_cls_u(scores, j, 2.0) for j in range(4))
    assert weighted_def_class(scores, 0, [0, 1], cm, 2.0) == pytest.approx(expected)


def test_smooth_class_gradient():
    """The smooth batch objective passes the finite-difference check."""
    rng = np.random.default_rng(4)
    A = 3
    mu = rng.uniform(0, 1, size=(1, A))
    params = SurrogateParams(u=1.5, rho=0.7, kappa=0.9)
    point = rng.normal(size=(1 + A, A))

    def objective(z):
        return T.sum_(smooth_class_batch(T.getitem(z, slice(0, 1)), T.getitem(z, slice(1, None)), mu, params))
    assert finite_diff_check(objective, point) < 1e-4


# ---------------------------------------------------------------------------
# adversarial classification
# ---------------------------------------------------------------------------

def test_adv_true_loss_at_zero_radius(threshold_policy, plan):
    """gamma = 0 charges only the decision taken at x."""
    cm = CostModel.for_classification(2, [0.2], alpha=0.8)
    ball = PerturbationBall(p=2, gamma=0.0)
    x = np.array([0.1])
    assert adv_true_def_loss_class(threshold_policy, x, 1, [1], cm, ball, plan) == \
        pytest.approx(true_def_loss_class(0, 1, [1], cm))


def test_adv_true_loss_straddling_threshold(threshold_policy, plan):
    """A ball across the threshold reaches both sides: mu_0 + mu_1, as the grid oracle says."""
    cm = CostModel.for_classification(2, [0.2], alpha=0.8)
    ball = PerturbationBall(p=2, gamma=0.3)
    x = np.array([0.1])
    value = adv_true_def_loss_class(threshold_policy, x, 1, [1], cm, ball, plan)
    reach = exact_reachability(threshold_policy, x, ball, 1000).outcomes
    assert reach == [0, 1]
    assert value == pytest.approx(0.8 + 0.0)


def test_adv_true_loss_certified_margin(threshold_policy, plan):
    """Far from the threshold the ball reaches one outcome only."""
    cm = CostModel.for_classification(2, [0.2], alpha=0.8)
    ball = PerturbationBall(p="inf", gamma=0.3)
    x = np.array([2.0])
    assert adv_true_def_loss_class(threshold_policy, x, 0, [1], cm, ball, plan) == 0.0


def test_adv_surrogate_at_zero_radius(plan):
    """gamma = 0 gives the tau-weighted margin surrogates at x."""
    h = ScoreModel(2, 3, seed=5)
    cm = CostModel.for_classification(2, [0.1], alpha=0.9)
    params = SurrogateParams(u=1.0, rho=0.5)
    x = np.array([0.2, -0.4])
    mu = np.array([0.0, 0.9, 0.1])
    expected = sum(tau_weights(mu)[j] * phi_cls_rho_u(h.scores(x), j, params) for j in range(3))
    value = adv_surrogate_def_class(h, x, 0, [0], cm, params, PerturbationBall(gamma=0.0), plan)
    assert value == pytest.approx(expected, abs=1e-12)


def test_adv_surrogate_zero_costs(plan):
    """All mu = 0 gives 0."""
    h = ScoreModel(2, 3, seed=5)
    cm = CostModel.for_classification(2, [0.0], alpha=0.0)
    value = adv_surrogate_def_class(h, np.zeros(2), 0, [0], cm, SurrogateParams(), PerturbationBall(gamma=0.5), plan)
    assert value == 0.0


def test_adv_surrogate_matches_grid_sup():
    """On a 1-D linear policy the sup estimate sits between a coarse and a fine grid sup."""
    h = ScoreModel.from_arrays([[[1.5], [-0.5], [0.3]]], [[0.1, 0.0, -0.2]])
    cm = CostModel.for_classification(2, [0.15], alpha=0.85)
    params = SurrogateParams(u=1.0, rho=0.6)
    ball = PerturbationBall(p=2, gamma=0.4)
    x = np.array([0.05])
    value = adv_surrogate_def_class(h, x, 1, [0], cm, params, ball, AttackPlan(steps=20, grid_resolution=1001))
    tau = tau_weights(np.array([0.85, 0.0, 1.0]))

    def grid_value(resolution):
        grid = x[0] + np.linspace(-0.4, 0.4, resolution)
        scores = h.scores(grid[:, None])
        sups = [max(phi_cls_rho_u(s, j, params) for s in scores) for j in range(3)]
        return float(tau @ np.array(sups))

    assert value >= grid_value(1001) - 1e-9
    assert value <= grid_value(20001) + 1e-3


def test_smooth_cls_at_zero_radius(plan):
    """gamma = 0 leaves Phi^u(h(x) / rho, j) exactly."""
    h = ScoreModel(2, 4, hidden_sizes=[3], seed=2)
    params = SurrogateParams(u=2.0, rho=0.5, kappa=3.0)
    x = np.array([0.7, 0.1])
    for j in range(4):
        value = smooth_adv_cls(h, x, j, params, PerturbationBall(gamma=0.0), plan)
        assert value == pytest.approx(phi_cls_u(h.scores(x) / 0.5, j, 2.0), abs=1e-12)


def test_smooth_cls_constant_policy(plan):
    """Input-independent scores have no margin deviation."""
    h = ScoreModel.from_arrays([np.zeros((3, 2))], [[0.2, -0.1, 0.4]])
    params = SurrogateParams(kappa=2.0)
    x = np.array([1.0, 1.0])
    value = smooth_adv_cls(h, x, 1, params, PerturbationBall(p="inf", gamma=0.8), plan)
    assert value == pytest.approx(phi_cls_u(h.scores(x), 1, 1.0), abs=1e-12)


def test_smooth_cls_linear_endpoint(plan):
    """Linear 1-D policy, l-inf ball: the penalty is gamma * ||w_j - w||."""
    w = np.array([1.0, -2.0, 0.5])
    h = ScoreModel.from_arrays([w[:, None]], [[0.0, 0.3, -0.1]])
    params = SurrogateParams(u=1.0, rho=1.0, kappa=1.0)
    x = np.array([0.2])
    for j in range(3):
        expected = phi_cls_u(h.scores(x), j, 1.0) + 0.25 * np.linalg.norm(w[j] - w)
        value = smooth_adv_cls(h, x, j, params, PerturbationBall(p="inf", gamma=0.25), plan)
        assert value == pytest.approx(expected, abs=1e-6)


def test_smooth_def_class_reduction(plan):
    """gamma = 0 and rho = 1 give the cost-weighted clean surrogate for any kappa."""
    h = ScoreModel(2, 4, seed=8)
    cm = CostModel.for_classification(2, [0.05, 0.1], alpha=0.9)
    x = np.array([-0.3, 0.8])
    for kappa in (0.0, 0.5, 4.0):
        params = SurrogateParams(u=1.0, rho=1.0, kappa=kappa)
        value = smooth_adv_def_class(h, x, 1, [1, 0], cm, params, PerturbationBall(gamma=0.0), plan)
        assert value == pytest.approx(weighted_def_class(h.scores(x), 1, [1, 0], cm, 1.0), abs=1e-10)


def test_smooth_def_class_zero_costs(plan):
    """All mu = 0 gives 0."""
    h = ScoreModel(2, 3, seed=8)
    cm = CostModel.for_classification(2, [0.0], alpha=0.0)
    params = SurrogateParams(kappa=1.0)
    assert smooth_adv_def_class(h, np.ones(2), 0, [0], cm, params, PerturbationBall(gamma=0.5), plan) == 0.0


def test_smooth_def_class_dominates_margin_surrogate():
    """With kappa = sqrt(|A|-1)/rho the smooth loss bounds the margin loss on shared candidates."""
    rng = np.random.default_rng(1)
    for trial in range(20):
        K, J = 2, 2
        h = ScoreModel(2, K + J, hidden_sizes=[4], activation="tanh", seed=trial)
        cm = CostModel.for_classification(K, [0.05, 0.1], alpha=0.9)
        rho = float(rng.uniform(0.3, 1.5))
        params = SurrogateParams(u=1.0, rho=rho, kappa=SurrogateParams.certified_kappa(K + J, rho))
        ball = PerturbationBall(p=2, gamma=float(rng.uniform(0.1, 1.0)))
        x = rng.normal(size=2)
        candidates = x + rng.uniform(-0.5, 0.5, size=(10, 2)) * ball.gamma
        y, m = int(rng.integers(0, K)), rng.integers(0, K, size=J)
        plan = AttackPlan(steps=0, restarts=0)
        smooth = smooth_adv_def_class(h, x, y, m, cm, params, ball, plan, candidates=candidates, search=False)
        margin = adv_surrogate_def_class(h, x, y, m, cm, params, ball, plan, candidates=candidates, search=False)
        assert smooth >= margin - 1e-9


# ---------------------------------------------------------------------------
# regression
# ---------------------------------------------------------------------------

def test_true_def_loss_reg_examples():
    """Trusting an exact predictor is free; an expert off by one costs 1 + fee."""
    cm = CostModel.for_regression([0.04])
    assert true_def_loss_reg(0, [2.0], [2.0], [[0.0]], cm) == 0.0
    assert true_def_loss_reg(1, [0.0], [2.0], [[3.0]], cm) == pytest.approx(1.04)


def test_argmin_decision_is_optimal():
    """Over every action, the realized cost is smallest at the argmin-cost action."""
    rng = np.random.default_rng(2)
    cm = CostModel.for_regression([0.04, 0.05, 0.07])
    for _ in range(50):
        t = rng.normal(size=1)
        f_out = rng.normal(size=1)
        m = rng.normal(size=(3, 1))
        costs = [true_def_loss_reg(j, f_out, t, m, cm) for j in range(4)]
        best = int(np.argmin(costs))
        assert all(costs[best] <= c for c in costs)


def test_surrogate_def_reg_single_expert():
    """With J = 1 there is no correction term."""
    value = surrogate_def_reg_from_costs([0.0, 0.0], [0.4, 1.0], 1.0)
    assert value == pytest.approx(1.4 * math.log(2.0))


def test_surrogate_def_reg_zero_costs():
    """All costs zero give zero."""
    assert surrogate_def_reg_from_costs([0.3, -0.2, 1.0], [0.0, 0.0, 0.0], 1.0) == 0.0


def test_surrogate_def_reg_example():
    """J=2, costs [1, 2, 3], zero scores: (5 + 4 + 3) log 3 - 1."""
    value = surrogate_def_reg_from_costs([0.0, 0.0, 0.0], [1.0, 2.0, 3.0], 1.0)
    assert value == pytest.approx(12 * LOG3 - 1.0, abs=1e-9)


def test_surrogate_def_reg_uses_realized_costs():
    """surrogate_def_reg fills the cost vector from the predictor and experts."""
    cm = CostModel.for_regression([0.04, 0.05])
    f_out, t, m = [0.5], [0.0], [[1.0], [0.2]]
    costs = [cost_reg(cm, j, f_out, m, t) for j in range(3)]
    assert surrogate_def_reg(f_out, [0.1, 0.2, 0.3], t, m, cm, 1.0) == \
        pytest.approx(surrogate_def_reg_from_costs([0.1, 0.2, 0.3], costs, 1.0))


def test_adv_true_reg_zero_radius(plan):
    """gamma = 0 gives the clean realized cost."""
    r, f = ScoreModel(1, 3, seed=1), ScoreModel(1, 1, seed=2)
    cm = CostModel.for_regression([0.04, 0.05])
    x, t, m = np.array([0.4]), np.array([0.1]), np.array([[0.3], [-0.2]])
    decision = int(np.argmax(r.scores(x)))
    value = adv_true_def_loss_reg(r, f, x, t, m, cm, PerturbationBall(gamma=0.0), plan)
    assert value == pytest.approx(true_def_loss_reg(decision, f.scores(x), t, m, cm))


def test_adv_true_reg_constant_rejector(plan):
    """A rejector always deferring to expert 1 costs that expert's cost."""
    r = ScoreModel.from_arrays([np.zeros((3, 1))], [[0.0, 1.0, 0.0]])
    f = ScoreModel(1, 1, seed=2)
    cm = CostModel.for_regression([0.04, 0.05])
    x, t, m = np.array([0.4]), np.array([0.1]), np.array([[0.3], [-0.2]])
    value = adv_true_def_loss_reg(r, f, x, t, m, cm, PerturbationBall(gamma=0.5), plan)
    assert value == pytest.approx(cost_reg(cm, 1, None, m, t))


def test_adv_true_reg_threshold(plan):
    """A threshold inside the ball charges the inflated predictor cost plus the expert cost."""
    r = ScoreModel.from_arrays([[[1.0], [-1.0]]], [[0.0, 0.0]])
    f = ScoreModel.from_arrays([[[2.0]]], [[0.0]])
    cm = CostModel.for_regression([0.04])
    ball = PerturbationBall(p=2, gamma=0.3)
    x, t, m = np.array([0.1]), np.array([0.0]), np.array([[0.5]])
    expected = cost_reg_pred_adv(cm, f, x, t, ball, plan) + cost_reg(cm, 1, None, m, t)
    assert adv_true_def_loss_reg(r, f, x, t, m, cm, ball, plan) == pytest.approx(expected)
    assert cost_reg_pred_adv(cm, f, x, t, ball, plan) == pytest.approx((2 * 0.4) ** 2, rel=1e-4)


def test_adv_surrogate_reg_zero_radius(plan):
    """gamma = 0 gives the clean-cost weighted margin surrogates minus the correction."""
    r, f = ScoreModel(1, 3, seed=3), ScoreModel(1, 1, seed=4)
    cm = CostModel.for_regression([0.04, 0.05])
    params = SurrogateParams(rho=0.8)
    x, t, m = np.array([0.2]), np.array([0.5]), np.array([[0.3], [0.9]])
    costs = np.array([cost_reg(cm, j, f.scores(x), m, t) for j in range(3)])
    sups = np.array([phi_cls_rho_u(r.scores(x), j, params) for j in range(3)])
    expected = tau_weights(costs) @ sups - costs[0]
    value = adv_surrogate_def_reg(r, f, x, t, m, cm, params, PerturbationBall(gamma=0.0), plan)
    assert value == pytest.approx(expected, abs=1e-10)


def test_smooth_reg_reduction(plan):
    """kappa = 0 and gamma = 0 give surrogate_def_reg."""
    r, f = ScoreModel(2, 4, seed=3), ScoreModel(2, 1, seed=4)
    cm = CostModel.for_regression([0.04, 0.05, 0.07])
    x, t, m = np.array([0.2, -0.1]), np.array([0.5]), np.array([[0.3], [0.9], [0.4]])
    value = smooth_adv_def_reg(r, f, x, t, m, cm, SurrogateParams(kappa=0.0), PerturbationBall(gamma=0.0), plan)
    assert value == pytest.approx(surrogate_def_reg(f.scores(x), r.scores(x), t, m, cm, 1.0), abs=1e-10)


def test_smooth_reg_dominates_margin_surrogate():
    """kappa = sqrt(J)/rho: the smooth regression loss bounds the margin one on shared candidates."""
    rng = np.random.default_rng(6)
    cm = CostModel.for_regression([0.04, 0.05])
    for trial in range(20):
        r, f = ScoreModel(2, 3, hidden_sizes=[3], seed=trial), ScoreModel(2, 1, seed=trial + 100)
        rho = float(rng.uniform(0.3, 1.5))
        params = SurrogateParams(rho=rho, kappa=math.sqrt(2) / rho)
        ball = PerturbationBall(p="inf", gamma=0.4)
        x = rng.normal(size=2)
        candidates = x + rng.uniform(-0.4, 0.4, size=(8, 2))
        t, m = rng.normal(size=1), rng.normal(size=(2, 1))
        quiet = AttackPlan(steps=5, restarts=0)
        smooth = smooth_adv_def_reg(r, f, x, t, m, cm, params, ball, quiet, candidates=candidates, search=False)
        margin = adv_surrogate_def_reg(r, f, x, t, m, cm, params, ball, quiet, candidates=candidates, search=False)
        assert smooth >= margin - 1e-9


def test_shared_candidates_are_in_the_ball():
    """Ball candidates stay inside the ball."""
    ball = PerturbationBall(p=2, gamma=0.5)
    x = np.array([[0.0, 1.0]])
    for point in ball_candidates(x, ball)[0]:
        assert ball.contains(point, x[0])
