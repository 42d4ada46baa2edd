"""
Regularized empirical risk minimization for deferral systems.

RERM-C minimizes the smooth adversarial classification objective over the
classifier h; RERM-R minimizes the smooth adversarial regression objective
jointly over the rejector r and the predictor f. The baseline trainer runs
the same loop on the clean surrogates. Proxies are searched against the
current parameters for every mini-batch.
"""
import logging
from typing import Callable, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

from deferkit.agents.costs import (CostModel, expert_costs_reg, regression_loss_node,
                                   shifted_costs)
from deferkit.agents.experts import ExpertPanel
from deferkit.attacks.ball import AttackPlan, PerturbationBall
from deferkit.attacks.proxies import (predictor_ascent, predictor_worst_case,
                                      reachable_outcomes, search_outcomes)
from deferkit.diffcore import tensor as T
from deferkit.diffcore.model import ScoreModel, forward, grad_wrt_models
from deferkit.errors import ConfigurationError, ContractViolation, TrainingDivergedError
from deferkit.evaluation.decisions import class_correct, decide_class, decide_reg, rmse
from deferkit.surrogates.clean import (cost_weighted_class_batch, regression_surrogate_batch,
                                       surrogate_class_batch)
from deferkit.surrogates.params import SurrogateParams
from deferkit.surrogates.smooth import smooth_class_batch, smooth_reg_batch
from deferkit.systems import ClassificationSystem, RegressionSystem
from deferkit.training.optimizer import Adam

logger = logging.getLogger(__name__)

BatchLoss = Callable[[np.ndarray], T.Node]

ROBUST_OBJECTIVES = ("rerm_c", "rerm_r")
ROBUST_LEARNING_RATE = 0.01
BASELINE_LEARNING_RATE = 0.005


class TrainConfig(BaseModel):
    """Training hyperparameters."""
    epochs: int = Field(20, ge=0)
    batch_size: int = Field(64, gt=0)
    learning_rate: Optional[float] = Field(None, gt=0, description="Unset: 0.01 for robust training, "
                                                                   "0.005 for the baselines")
    eta: float = Field(1e-4, ge=0, description="Regularizer weight")
    regularizer: Literal["l2_params", "none"] = "l2_params"
    seed: int = 0
    objective: Literal["clean_class", "clean_class_weighted", "clean_reg", "rerm_c", "rerm_r"] = "rerm_c"
    monitor_size: int = Field(128, ge=0, description="Training examples used for per-epoch metrics")

    @model_validator(mode="before")
    @classmethod
    def _nu_alias(cls, data):
        if isinstance(data, dict) and "nu" in data:
            data = dict(data)
            nu = data.pop("nu")
            if "eta" in data and data["eta"] != nu:
                raise ValueError(f"nu={nu} and eta={data['eta']} disagree; nu is an alias of eta")
            logger.warning(f"train.nu={nu} is read as the regularizer weight eta; "
                           f"the two are not known to be the same quantity")
            data["eta"] = nu
        return data

    def resolved_learning_rate(self) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        return ROBUST_LEARNING_RATE if self.objective in ROBUST_OBJECTIVES else BASELINE_LEARNING_RATE


# ---------------------------------------------------------------------------
# shared loop
# ---------------------------------------------------------------------------

def _regularizer(models: List[ScoreModel], cfg: TrainConfig) -> Tuple[float, List[np.ndarray]]:
    """eta * ||theta||^2 over all parameters and its gradient."""
    if cfg.regularizer == "none" or cfg.eta == 0:
        return 0.0, [np.zeros(m.num_parameters) for m in models]
    flats = [m.flat_parameters() for m in models]
    value = cfg.eta * float(sum(np.sum(f ** 2) for f in flats))
    return value, [2.0 * cfg.eta * f for f in flats]


def _diverged(message: str, last_good: Dict[str, ScoreModel], epoch: int) -> TrainingDivergedError:
    logger.error(f"Training diverged at epoch {epoch}: {message}")
    return TrainingDivergedError(message, models=last_good, epoch=epoch)


def _fit(named: Dict[str, ScoreModel],
         batch_loss: BatchLoss,
         train_idx: np.ndarray,
         cfg: TrainConfig,
         counter=None,
         monitor: Optional[Callable[[], Dict[str, float]]] = None) -> List[Dict]:
    """Mini-batch Adam on batch_loss + eta * Omega; updates ``named`` in place and returns the history."""
    models = list(named.values())
    sizes = [m.num_parameters for m in models]
    optimizer = Adam(sum(sizes), cfg.resolved_learning_rate())
    rng = np.random.default_rng(cfg.seed)
    history: List[Dict] = []
    last_good = {name: m.clone() for name, m in named.items()}

    for epoch in range(1, cfg.epochs + 1):
        if counter is not None:
            counter.reset()
        order = rng.permutation(train_idx)
        total, seen = 0.0, 0
        for start in range(0, order.size, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            loss = batch_loss(batch)
            reg_value, reg_grads = _regularizer(models, cfg)
            value = float(loss.value) + reg_value
            if not np.isfinite(value):
                raise _diverged("objective is not finite", last_good, epoch)
            grads = grad_wrt_models(loss, models)
            if counter is not None:
                counter.tick("backward", "param_backward", batch.size)
            flat_grad = np.concatenate([g + rg for g, rg in zip(grads, reg_grads)])
            if not np.all(np.isfinite(flat_grad)):
                raise _diverged("gradient is not finite", last_good, epoch)

            updated = optimizer.step(np.concatenate([m.flat_parameters() for m in models]), flat_grad)
            offsets = np.cumsum([0] + sizes)
            for model, lo, hi in zip(models, offsets[:-1], offsets[1:]):
                model.set_flat_parameters(updated[lo:hi])
            last_good = {name: m.clone() for name, m in named.items()}
            total += value * batch.size
            seen += batch.size

        record = {"epoch": epoch, "objective": total / max(seen, 1)}
        if monitor is not None:
            record.update(monitor())
        if counter is not None:
            record["passes"] = counter.snapshot()
        history.append(record)
        logger.info(f"epoch {epoch}/{cfg.epochs}: " +
                    ", ".join(f"{k}={v:.4f}" for k, v in record.items() if isinstance(v, float)))
    return history


def _monitor_index(train_idx: np.ndarray, cfg: TrainConfig) -> np.ndarray:
    rng = np.random.default_rng([cfg.seed, 1])
    return np.sort(rng.permutation(train_idx)[:cfg.monitor_size])


def _check_dataset(dataset, panel: ExpertPanel, task: str) -> None:
    if dataset.task != task:
        raise ContractViolation(f"expected a {task} dataset, got {dataset.task}")
    if panel.cache is None or panel.cache.shape[0] != dataset.n:
        raise ContractViolation("expert outputs must be sampled on this dataset before training")


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------

def _class_monitor(h: ScoreModel, dataset, panel, cm, params, ball, plan, index):
    def monitor() -> Dict[str, float]:
        if index.size == 0:
            return {}
        X, y, m = dataset.features[index], dataset.targets[index], panel.outputs(index)
        accuracy = 100.0 * float(np.mean(class_correct(decide_class(h, X), y, m, cm.num_classes)))
        reach = reachable_outcomes(h, X, ball, plan, params, search=ball.gamma > 0)
        def_loss = float(np.mean(np.sum(shifted_costs(cm, y, m) * reach, axis=1)))
        return {"clean_accuracy": accuracy, "def_loss": def_loss}
    return monitor


def train_rerm_c(h: ScoreModel, dataset, panel: ExpertPanel, cm: CostModel, params: SurrogateParams,
                 ball: PerturbationBall, plan: AttackPlan, cfg: TrainConfig,
                 counter=None) -> Tuple[ScoreModel, List[Dict]]:
    """
    Robust training of a classification deferral policy.

    Minimizes the mean smooth adversarial deferral objective plus eta * Omega(h).
    With kappa = 0 the margin-deviation term vanishes and no proxy search is run.

    Args:
        h (ScoreModel): Initial classifier over K + J actions; left untouched
        dataset (Dataset): Classification dataset; the training split is used
        panel (ExpertPanel): Panel with outputs sampled on ``dataset``
        cm (CostModel): Classification costs
        params (SurrogateParams): u, rho and kappa
        ball (PerturbationBall): Threat model used for the proxies
        plan (AttackPlan): Proxy search configuration
        cfg (TrainConfig): Optimizer settings
        counter (Optional[PassCounter]): Per-epoch pass accounting

    Returns:
        Tuple[ScoreModel, List[Dict]]: Trained copy of ``h`` and per-epoch history
    """
    _check_dataset(dataset, panel, "classification")
    if h.output_dim != cm.action_count:
        raise ContractViolation(f"h has {h.output_dim} outputs, the cost model {cm.action_count} actions")
    params.check(cm.action_count)
    h = h.clone()
    A, d = h.output_dim, h.input_dim
    features, labels, outputs = dataset.features, dataset.targets, panel.outputs()
    search = params.kappa > 0

    def batch_loss(batch: np.ndarray) -> T.Node:
        X = features[batch]
        B = batch.size
        mu = shifted_costs(cm, labels[batch], outputs[batch])
        stacked = X
        if search:
            proxies, _ = search_outcomes(h, X, ball, plan, params, "penalty", counter=counter,
                                         track_best=plan.restarts > 0, phase="pgd")
            stacked = np.concatenate([X, proxies.reshape(B * A, d)])
        scores = forward(h, stacked)
        if counter is not None:
            counter.tick("forward", "clean_forward", B)
        clean = T.getitem(scores, slice(0, B))
        proxy = T.getitem(scores, slice(B, None)) if search else None
        return T.mean(smooth_class_batch(clean, proxy, mu, params))

    logger.info(f"RERM-C: n={dataset.train_idx.size}, |A|={A}, gamma={ball.gamma}, kappa={params.kappa}, "
                f"rho={params.rho}, u={params.u}, epochs={cfg.epochs}")
    monitor = _class_monitor(h, dataset, panel, cm, params, ball, plan, _monitor_index(dataset.train_idx, cfg))
    history = _fit({"h": h}, batch_loss, dataset.train_idx, cfg, counter, monitor)
    return h, history


# ---------------------------------------------------------------------------
# regression
# ---------------------------------------------------------------------------

def _reg_monitor(r: ScoreModel, f: ScoreModel, dataset, panel, cm, params, ball, plan, index):
    def monitor() -> Dict[str, float]:
        if index.size == 0:
            return {}
        X, t, m = dataset.features[index], dataset.targets[index], panel.outputs(index)
        _, system_out = decide_reg(r, f, X, m)
        worst = predictor_worst_case(f, X, t, ball, plan, cm.base_loss, search=ball.gamma > 0)
        costs = np.concatenate([(cm.alphas[0] * worst + cm.betas[0])[:, None], expert_costs_reg(cm, m, t)], axis=1)
        reach = reachable_outcomes(r, X, ball, plan, params, search=ball.gamma > 0)
        return {"clean_rmse": rmse(system_out, t), "predictor_rmse": rmse(f.scores(X), t),
                "def_loss": float(np.mean(np.sum(costs * reach, axis=1)))}
    return monitor


def train_rerm_r(r: ScoreModel, f: ScoreModel, dataset, panel: ExpertPanel, cm: CostModel,
                 params: SurrogateParams, ball: PerturbationBall, plan: AttackPlan, cfg: TrainConfig,
                 counter=None) -> Tuple[Tuple[ScoreModel, ScoreModel], List[Dict]]:
    """
    Joint robust training of a rejector and a predictor.

    The predictor cost of every example is taken at the point of its ball
    where the current f does worst; gradients reach f through that cost and
    through the weights it enters. Returns trained copies ``(r, f)`` and the history.
    """
    _check_dataset(dataset, panel, "regression")
    if r.output_dim != cm.action_count:
        raise ContractViolation(f"r has {r.output_dim} outputs, the cost model {cm.action_count} actions")
    if f.output_dim != dataset.output_dim:
        raise ContractViolation(f"f has {f.output_dim} outputs, targets have {dataset.output_dim}")
    params.check(cm.action_count)
    r, f = r.clone(), f.clone()
    A, d = r.output_dim, r.input_dim
    features, targets, outputs = dataset.features, dataset.targets, panel.outputs()
    search = params.kappa > 0

    def batch_loss(batch: np.ndarray) -> T.Node:
        X, t = features[batch], targets[batch]
        B = batch.size
        expert_costs = expert_costs_reg(cm, outputs[batch], t)
        worst_points = X
        if ball.gamma > 0:
            worst_points, _ = predictor_ascent(f, X, t, ball, plan, cm.base_loss, counter=counter)
        stacked = X
        if search:
            proxies, _ = search_outcomes(r, X, ball, plan, params, "penalty", counter=counter,
                                         track_best=plan.restarts > 0, phase="pgd")
            stacked = np.concatenate([X, proxies.reshape(B * A, d)])
        scores = forward(r, stacked)
        predictor_cost = regression_loss_node(forward(f, worst_points), t, cm.base_loss) * float(cm.alphas[0]) \
            + float(cm.betas[0])
        if counter is not None:
            counter.tick("forward", "clean_forward", B)
        clean = T.getitem(scores, slice(0, B))
        proxy = T.getitem(scores, slice(B, None)) if search else None
        return T.mean(smooth_reg_batch(clean, proxy, predictor_cost, expert_costs, params))

    logger.info(f"RERM-R: n={dataset.train_idx.size}, J={cm.num_experts}, gamma={ball.gamma}, "
                f"kappa={params.kappa}, epochs={cfg.epochs}")
    monitor = _reg_monitor(r, f, dataset, panel, cm, params, ball, plan, _monitor_index(dataset.train_idx, cfg))
    history = _fit({"r": r, "f": f}, batch_loss, dataset.train_idx, cfg, counter, monitor)
    return (r, f), history


# ---------------------------------------------------------------------------
# baseline
# ---------------------------------------------------------------------------

def train_baseline(system, dataset, panel: ExpertPanel, cm: CostModel, cfg: TrainConfig,
                   u: float = 1.0, counter=None):
    """
    Clean one-stage training with no adversarial term.

    ``cfg.objective`` selects the surrogate: ``clean_class`` (1{j=y} on classes,
    1 - c_e on experts), ``clean_class_weighted`` (sum_{i != j} mu_i on every
    action) or ``clean_reg``. Returns the trained copy of ``system`` and the history.
    """
    zero_ball = PerturbationBall(p=2, gamma=0.0)
    plan = AttackPlan(steps=0, restarts=0)
    params = SurrogateParams(u=u)
    system = system.clone()

    if isinstance(system, ClassificationSystem):
        if cfg.objective not in ("clean_class", "clean_class_weighted"):
            raise ConfigurationError("invalid baseline objective",
                                     [f"objective {cfg.objective!r} is not a clean classification objective"])
        _check_dataset(dataset, panel, "classification")
        kernel = surrogate_class_batch if cfg.objective == "clean_class" else cost_weighted_class_batch
        h, labels, outputs = system.h, dataset.targets, panel.outputs()

        def batch_loss(batch: np.ndarray) -> T.Node:
            scores = forward(h, dataset.features[batch])
            if counter is not None:
                counter.tick("forward", "clean_forward", batch.size)
            return T.mean(kernel(scores, labels[batch], outputs[batch], cm, u))

        monitor = _class_monitor(h, dataset, panel, cm, params, zero_ball, plan,
                                 _monitor_index(dataset.train_idx, cfg))
        named = {"h": h}
    elif isinstance(system, RegressionSystem):
        if cfg.objective != "clean_reg":
            raise ConfigurationError("invalid baseline objective",
                                     [f"objective {cfg.objective!r} is not a clean regression objective"])
        _check_dataset(dataset, panel, "regression")
        r, f, targets, outputs = system.r, system.f, dataset.targets, panel.outputs()

        def batch_loss(batch: np.ndarray) -> T.Node:
            X, t = dataset.features[batch], targets[batch]
            predictor_cost = regression_loss_node(forward(f, X), t, cm.base_loss) * float(cm.alphas[0]) \
                + float(cm.betas[0])
            surrogate = regression_surrogate_batch(forward(r, X), predictor_cost,
                                                   expert_costs_reg(cm, outputs[batch], t), u)
            if counter is not None:
                counter.tick("forward", "clean_forward", batch.size)
            return T.mean(surrogate)

        monitor = _reg_monitor(r, f, dataset, panel, cm, params, zero_ball, plan,
                               _monitor_index(dataset.train_idx, cfg))
        named = {"r": r, "f": f}
    else:
        raise ContractViolation(f"unsupported system type {type(system).__name__}")

    logger.info(f"Baseline ({cfg.objective}): n={dataset.train_idx.size}, epochs={cfg.epochs}")
    history = _fit(named, batch_loss, dataset.train_idx, cfg, counter, monitor)
    return system, history
