"""
Tests for robust and baseline training
"""
import os
import sys
import pytest
import numpy as np
from pydantic import ValidationError

# Add the project root to the path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from deferkit.agents import CostModel, ExpertPanel, ExpertSpec, sample_expert_outputs
from deferkit.attacks import AttackPlan, PerturbationBall
from deferkit.data import gen_blobs, gen_linear_reg
from deferkit.diffcore import ScoreModel
from deferkit.errors import ConfigurationError, ContractViolation, TrainingDivergedError
from deferkit.surrogates import SurrogateParams
from deferkit.systems import ClassificationSystem, RegressionSystem
from deferkit.training import Adam, PassCounter, TrainConfig, audit_epoch_cost
from deferkit.training import train_baseline, train_rerm_c, train_rerm_r


@pytest.fixture
def blobs():
    """Two well separated classes in the plane."""
    return gen_blobs(K=2, d=2, n=60, separation=4.0, seed=1)


@pytest.fixture
def class_panel(blobs):
    """One fairly reliable specialist, outputs sampled on the blobs."""
    panel = ExpertPanel([ExpertSpec(kind="class_specialist", id=1, p=0.9)])
    sample_expert_outputs(panel, blobs, seed=0)
    return panel


@pytest.fixture
def class_costs():
    """K=2, one expert with fee 0.1."""
    return CostModel.for_classification(2, [0.1], alpha=0.9)


@pytest.fixture
def linear():
    """Noiseless 2-D linear targets."""
    return gen_linear_reg(d=2, n=80, noise_sigma=0.0, seed=2)


@pytest.fixture
def reg_panel(linear):
    """One noisy regression expert."""
    panel = ExpertPanel([ExpertSpec(kind="reg_noisy", id=1, sigma=1.0)])
    sample_expert_outputs(panel, linear, seed=0)
    return panel


def test_rerm_c_at_zero_radius_is_the_weighted_baseline(blobs, class_panel, class_costs):
    """gamma=0, kappa=0, rho=1, eta=0: RERM-C takes the same steps as clean_class_weighted."""
    h = ScoreModel(2, 3, seed=4)
    cfg = TrainConfig(epochs=3, batch_size=16, eta=0.0, objective="clean_class_weighted", monitor_size=0)
    robust, _ = train_rerm_c(h, blobs, class_panel, class_costs, SurrogateParams(rho=1.0, kappa=0.0),
                             PerturbationBall(gamma=0.0), AttackPlan(), cfg)
    baseline, _ = train_baseline(ClassificationSystem(h, 2, 1), blobs, class_panel, class_costs, cfg)
    np.testing.assert_allclose(robust.flat_parameters(), baseline.h.flat_parameters(), rtol=0, atol=1e-10)


def test_rerm_c_leaves_input_model_untouched(blobs, class_panel, class_costs):
    """Training works on a copy."""
    h = ScoreModel(2, 3, seed=4)
    before = h.fingerprint()
    trained, history = train_rerm_c(h, blobs, class_panel, class_costs, SurrogateParams(kappa=0.5),
                                    PerturbationBall(gamma=0.2), AttackPlan(steps=3),
                                    TrainConfig(epochs=2, monitor_size=16))
    assert h.fingerprint() == before
    assert trained.fingerprint() != before
    assert [r["epoch"] for r in history] == [1, 2]
    assert {"objective", "clean_accuracy", "def_loss"} <= set(history[-1])


def test_rerm_c_lowers_the_objective(blobs, class_panel, class_costs):
    """The epoch-mean smooth objective goes down on separable data."""
    h = ScoreModel(2, 3, seed=0)
    _, history = train_rerm_c(h, blobs, class_panel, class_costs, SurrogateParams(kappa=0.5),
                              PerturbationBall(gamma=0.2), AttackPlan(steps=3),
                              TrainConfig(epochs=8, learning_rate=0.05, monitor_size=0))
    assert history[-1]["objective"] < history[0]["objective"]


def test_rerm_c_epoch_cost(blobs, class_panel, class_costs):
    """One epoch costs n (1 + |A| T) forwards and backwards."""
    counter = PassCounter()
    plan = AttackPlan(steps=4, restarts=0, init="center")
    _, history = train_rerm_c(ScoreModel(2, 3, seed=1), blobs, class_panel, class_costs,
                              SurrogateParams(kappa=1.0), PerturbationBall(gamma=0.3), plan,
                              TrainConfig(epochs=1, batch_size=7, monitor_size=0), counter=counter)
    n = blobs.train_idx.size
    audit = audit_epoch_cost(counter, n, 3, 4)
    assert audit.success
    assert audit.expected == n * 13
    assert history[0]["passes"]["forwards"] == n * 13


def test_audit_reports_mismatch():
    """A counter that disagrees with n (1 + |A| T) fails the audit."""
    counter = PassCounter()
    counter.tick("forward", "clean_forward", 10)
    audit = audit_epoch_cost(counter, 10, 3, 2)
    assert not audit.success
    with pytest.raises(ContractViolation):
        audit_epoch_cost(counter, 10, 3, 2, raise_on_mismatch=True)
    with pytest.raises(ContractViolation):
        counter.tick("sideways", "clean_forward", 1)


def test_rerm_c_rejects_mismatched_model(blobs, class_panel, class_costs):
    """h must score every action of the cost model."""
    with pytest.raises(ContractViolation):
        train_rerm_c(ScoreModel(2, 4), blobs, class_panel, class_costs, SurrogateParams(),
                     PerturbationBall(), AttackPlan(), TrainConfig(epochs=1))


def test_rerm_c_rejects_uncertified_kappa(blobs, class_panel, class_costs):
    """certified=true requires kappa >= sqrt(|A|-1)/rho."""
    with pytest.raises(ConfigurationError):
        train_rerm_c(ScoreModel(2, 3), blobs, class_panel, class_costs,
                     SurrogateParams(kappa=0.1, rho=1.0, certified=True),
                     PerturbationBall(gamma=0.1), AttackPlan(), TrainConfig(epochs=1))


def test_training_needs_sampled_experts(blobs, class_costs):
    """A panel without outputs on this dataset is a contract violation."""
    panel = ExpertPanel([ExpertSpec(kind="class_specialist", id=1)])
    with pytest.raises(ContractViolation):
        train_rerm_c(ScoreModel(2, 3), blobs, panel, class_costs, SurrogateParams(),
                     PerturbationBall(), AttackPlan(), TrainConfig(epochs=1))


def test_divergence_keeps_last_finite_models(blobs, class_panel, class_costs):
    """A non-finite objective raises TrainingDivergedError carrying the models."""
    h = ScoreModel.from_arrays([np.zeros((3, 2))], [[np.nan, 0.0, 0.0]])
    with pytest.raises(TrainingDivergedError) as info:
        train_rerm_c(h, blobs, class_panel, class_costs, SurrogateParams(), PerturbationBall(),
                     AttackPlan(), TrainConfig(epochs=2, monitor_size=0))
    assert info.value.epoch == 1
    assert "h" in info.value.models


def test_nu_is_read_as_eta():
    """train.nu is an alias of the regularizer weight."""
    assert TrainConfig(nu=0.01).eta == 0.01
    assert TrainConfig(nu=0.01, eta=0.01).eta == 0.01
    with pytest.raises(ValidationError):
        TrainConfig(nu=0.1, eta=0.2)


def test_learning_rate_follows_the_objective():
    """Unset, the rate is 0.01 for robust objectives and 0.005 for the baselines; an explicit rate wins."""
    assert TrainConfig(objective="rerm_c").resolved_learning_rate() == 0.01
    assert TrainConfig(objective="rerm_r").resolved_learning_rate() == 0.01
    for objective in ("clean_class", "clean_class_weighted", "clean_reg"):
        assert TrainConfig(objective=objective).resolved_learning_rate() == 0.005
    assert TrainConfig(objective="clean_class", learning_rate=0.02).resolved_learning_rate() == 0.02


def test_baseline_first_step_uses_the_baseline_rate(blobs, class_panel, class_costs):
    """One full-batch baseline step moves every parameter with a nonzero gradient by 0.005."""
    h = ScoreModel(2, 3, seed=4)
    cfg = TrainConfig(epochs=1, batch_size=blobs.train_idx.size, eta=0.0, objective="clean_class",
                      monitor_size=0)
    trained, _ = train_baseline(ClassificationSystem(h, 2, 1), blobs, class_panel, class_costs, cfg)
    step = np.abs(trained.h.flat_parameters() - h.flat_parameters())
    moved = step[step > 1e-9]
    assert moved.size > 0
    np.testing.assert_allclose(moved, 0.005, rtol=1e-4)


def test_baseline_rejects_wrong_objective(blobs, class_panel, class_costs):
    """A regression objective cannot train a classifier."""
    with pytest.raises(ConfigurationError):
        train_baseline(ClassificationSystem(ScoreModel(2, 3), 2, 1), blobs, class_panel, class_costs,
                       TrainConfig(epochs=1, objective="clean_reg"))


def test_rerm_r_at_zero_radius_is_the_clean_baseline(linear, reg_panel):
    """gamma=0, kappa=0, rho=1, eta=0: RERM-R and clean_reg take the same steps."""
    cm = CostModel.for_regression([0.3])
    r, f = ScoreModel(2, 2, seed=5), ScoreModel(2, 1, seed=6)
    cfg = TrainConfig(epochs=3, batch_size=20, eta=0.0, objective="clean_reg", monitor_size=0)
    (r1, f1), _ = train_rerm_r(r, f, linear, reg_panel, cm, SurrogateParams(kappa=0.0),
                               PerturbationBall(gamma=0.0), AttackPlan(), cfg)
    system, _ = train_baseline(RegressionSystem(r, f, 1), linear, reg_panel, cm, cfg)
    np.testing.assert_allclose(r1.flat_parameters(), system.r.flat_parameters(), rtol=0, atol=1e-8)
    np.testing.assert_allclose(f1.flat_parameters(), system.f.flat_parameters(), rtol=0, atol=1e-8)


def test_rerm_r_history(linear, reg_panel):
    """Robust regression training reports RMSEs and the sampled Def.Loss."""
    cm = CostModel.for_regression([0.3])
    (r, f), history = train_rerm_r(ScoreModel(2, 2, seed=5), ScoreModel(2, 1, seed=6), linear, reg_panel, cm,
                                   SurrogateParams(kappa=0.5), PerturbationBall(gamma=0.1),
                                   AttackPlan(steps=3), TrainConfig(epochs=2, monitor_size=20))
    assert {"objective", "clean_rmse", "predictor_rmse", "def_loss"} <= set(history[-1])
    assert history[-1]["def_loss"] >= 0


def test_rerm_r_rejects_predictor_shape(linear, reg_panel):
    """f must output one value per target dimension."""
    with pytest.raises(ContractViolation):
        train_rerm_r(ScoreModel(2, 2), ScoreModel(2, 3), linear, reg_panel, CostModel.for_regression([0.3]),
                     SurrogateParams(), PerturbationBall(), AttackPlan(), TrainConfig(epochs=1))


def test_adam_first_step_is_learning_rate():
    """Bias correction makes the first step exactly lr * sign(g) (up to eps)."""
    adam = Adam(3, 0.1)
    out = adam.step(np.zeros(3), np.array([2.0, -0.5, 0.0]))
    np.testing.assert_allclose(out, [-0.1, 0.1, 0.0], atol=1e-8)


@pytest.mark.slow
def test_degenerate_regression_recovers_true_weights(reg_panel, linear):
    """With gamma=0 and noiseless targets the jointly trained predictor converges to w*."""
    cm = CostModel.for_regression([0.5])
    r, f = ScoreModel(2, 2, seed=5), ScoreModel(2, 1, seed=6)
    cfg = TrainConfig(epochs=400, batch_size=linear.train_idx.size, learning_rate=0.01, eta=0.0,
                      monitor_size=0)
    (_, f), _ = train_rerm_r(r, f, linear, reg_panel, cm, SurrogateParams(kappa=0.0),
                             PerturbationBall(gamma=0.0), AttackPlan(), cfg)
    w, b = f.parameters()
    np.testing.assert_allclose(w[0], linear.meta["w_star"], atol=0.05)
    assert abs(b[0]) < 0.05
