"""
Experiment configuration

Loads one JSON or YAML document per experiment, applies dotted-path
overrides, validates it into pydantic models and builds the objects the
commands need (dataset, expert panel, cost model, threat model, system).
"""
import hashlib
import json
import logging
import os
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

import yaml
from pydantic import BaseModel, Field, ValidationError

from deferkit.agents.costs import BASE_LOSSES, CLAMP_POLICIES, CostModel
from deferkit.agents.experts import ExpertPanel, ExpertSpec, sample_expert_outputs
from deferkit.attacks.ball import AttackPlan, PerturbationBall
from deferkit.data import NORMALIZATIONS, Dataset, gen_blobs, gen_linear_reg, gen_piecewise_reg, load_csv
from deferkit.diffcore.model import ScoreModel
from deferkit.errors import ConfigurationError
from deferkit.evaluation.metrics import ATTACK_MODES
from deferkit.oracle.verify import VerifySettings
from deferkit.surrogates.params import SurrogateParams
from deferkit.systems import ClassificationSystem, RegressionSystem
from deferkit.training.trainer import TrainConfig

logger = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "DEFERKIT_OUTPUT_ROOT"
DEFAULT_CONFIG = "config.json"


class DataConfig(BaseModel):
    """Where the examples come from."""
    source: Literal["blobs", "linear", "piecewise", "csv"] = "blobs"
    n: int = Field(600, ge=1, description="Number of generated examples")
    d: int = Field(2, ge=1, description="Feature dimension of generated data")
    K: int = Field(3, ge=2, description="Number of blob classes")
    separation: float = Field(3.0, gt=0, description="Radius of the blob centers")
    noise_sigma: float = Field(0.1, ge=0)
    breakpoint: float = Field(0.0, description="Start of the hard region of the piecewise benchmark")
    train_fraction: float = Field(0.8, gt=0, le=1)
    normalize: str = "none"
    path: Optional[str] = Field(None, description="CSV file for source=csv")
    target_column: Optional[str] = None


class PanelConfig(BaseModel):
    experts: List[ExpertSpec] = Field(default_factory=list)
    seed: Optional[int] = Field(None, description="Sampling seed; the experiment seed when unset")


class CostsConfig(BaseModel):
    expert_fees: List[float] = Field(default_factory=list, description="beta of each expert, in expert order")
    predictor_fee: float = Field(0.0, ge=0, description="beta_0 of the regression predictor")
    alpha: float = Field(1.0, ge=0)
    base_loss: str = "squared"
    clamp_policy: str = "strict"


class LossConfig(BaseModel):
    """Surrogate family and threat model."""
    u: float = Field(1.0, gt=0)
    rho: float = Field(1.0, gt=0)
    kappa: float = Field(0.0, ge=0)
    certified: bool = False
    gamma: float = Field(0.0, ge=0)
    p: Union[int, str] = 2
    box: Optional[Tuple[float, float]] = Field(None, description="Feature range attacks stay in; "
                                                                 "(0, 1) under minmax normalization when unset")


class ModelConfig(BaseModel):
    hidden_sizes: List[int] = Field(default_factory=list)
    activation: str = "relu"


class EvalConfig(BaseModel):
    modes: List[str] = Field(default_factory=lambda: list(ATTACK_MODES))
    nu: Optional[int] = Field(None, description="Targeted action; the last action when unset")
    split: Literal["train", "test", "all"] = "test"


class ExperimentConfig(BaseModel):
    """One experiment."""
    name: str = "blobs-class"
    task: Literal["classification", "regression"] = "classification"
    seed: int = 0
    output_dir: str = "outputs"
    data: DataConfig = Field(default_factory=DataConfig)
    panel: PanelConfig = Field(default_factory=PanelConfig)
    costs: CostsConfig = Field(default_factory=CostsConfig)
    loss: LossConfig = Field(default_factory=LossConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    attack: AttackPlan = Field(default_factory=AttackPlan)
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    verify: VerifySettings = Field(default_factory=VerifySettings)

    @property
    def num_experts(self) -> int:
        return len(self.panel.experts)

    def action_count(self) -> Optional[int]:
        """|A| when it is known before loading data."""
        if self.task == "regression":
            return self.num_experts + 1
        if self.data.source == "blobs":
            return self.data.K + self.num_experts
        return None

    def perturbation_box(self) -> Optional[Tuple[float, float]]:
        if self.loss.box is not None:
            return self.loss.box
        return (0.0, 1.0) if self.data.normalize == "minmax" else None


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

_SOURCE_TASKS = {"blobs": "classification", "linear": "regression", "piecewise": "regression"}
_TASK_OBJECTIVES = {
    "classification": ("rerm_c", "clean_class", "clean_class_weighted"),
    "regression": ("rerm_r", "clean_reg"),
}


def cross_field_errors(cfg: ExperimentConfig) -> List[str]:
    """Every violated cross-field constraint of a structurally valid config."""
    errors = []
    J = cfg.num_experts
    if J < 1:
        errors.append("panel.experts: at least one expert is required")
    if len(cfg.costs.expert_fees) != J:
        errors.append(f"costs.expert_fees: {len(cfg.costs.expert_fees)} fees for {J} experts")
    ids = sorted(e.id for e in cfg.panel.experts)
    if ids != list(range(1, J + 1)):
        errors.append(f"panel.experts: ids must be 1..{J} without repeats, got {ids}")
    for e in cfg.panel.experts:
        if e.task != cfg.task:
            errors.append(f"panel.experts[{e.id}]: {e.kind} is incompatible with task {cfg.task}")

    expected = _SOURCE_TASKS.get(cfg.data.source)
    if expected and expected != cfg.task:
        errors.append(f"data.source: {cfg.data.source} generates {expected} data, task is {cfg.task}")
    if cfg.data.source == "csv" and (not cfg.data.path or not cfg.data.target_column):
        errors.append("data.path and data.target_column are required for source=csv")
    if cfg.data.normalize not in NORMALIZATIONS:
        errors.append(f"data.normalize must be one of {NORMALIZATIONS}, got {cfg.data.normalize!r}")

    if cfg.costs.base_loss not in BASE_LOSSES:
        errors.append(f"costs.base_loss must be one of {BASE_LOSSES}, got {cfg.costs.base_loss!r}")
    if cfg.costs.clamp_policy not in CLAMP_POLICIES:
        errors.append(f"costs.clamp_policy must be one of {CLAMP_POLICIES}, got {cfg.costs.clamp_policy!r}")
    if cfg.task == "classification" and cfg.costs.clamp_policy == "strict":
        for e, fee in enumerate(cfg.costs.expert_fees):
            if cfg.costs.alpha + fee > 1.0 + 1e-12:
                errors.append(f"costs.expert_fees[{e}]: alpha + fee = {cfg.costs.alpha + fee:g} exceeds 1 "
                              f"under the strict clamp policy")
        if cfg.costs.alpha > 1.0:
            errors.append(f"costs.alpha={cfg.costs.alpha:g} exceeds 1 under the strict clamp policy")

    if cfg.loss.p not in (2, "inf"):
        errors.append(f"loss.p must be 2 or 'inf', got {cfg.loss.p!r}")
    if cfg.loss.box is not None and not cfg.loss.box[0] < cfg.loss.box[1]:
        errors.append(f"loss.box must satisfy lo < hi, got {list(cfg.loss.box)}")
    A = cfg.action_count()
    if A is not None:
        if cfg.loss.certified and cfg.loss.kappa < SurrogateParams.certified_kappa(A, cfg.loss.rho) - 1e-12:
            errors.append(f"loss.kappa={cfg.loss.kappa:g} is below sqrt(|A|-1)/rho="
                          f"{SurrogateParams.certified_kappa(A, cfg.loss.rho):g} with certified=true")
        if cfg.eval.nu is not None and not 0 <= cfg.eval.nu < A:
            errors.append(f"eval.nu={cfg.eval.nu} outside the action space 0..{A - 1}")

    if cfg.train.objective not in _TASK_OBJECTIVES[cfg.task]:
        errors.append(f"train.objective {cfg.train.objective!r} does not apply to {cfg.task}")
    for mode in cfg.eval.modes:
        if mode not in ATTACK_MODES:
            errors.append(f"eval.modes: unknown mode {mode!r}")
    if cfg.model.activation not in ("relu", "tanh"):
        errors.append(f"model.activation must be relu or tanh, got {cfg.model.activation!r}")
    return errors


def validate_config(doc: Dict[str, Any]) -> ExperimentConfig:
    """Validate a raw document; raises one ConfigurationError listing every problem."""
    try:
        cfg = ExperimentConfig.model_validate(doc)
    except ValidationError as e:
        errors = [f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in e.errors()]
        raise ConfigurationError("invalid experiment config", errors) from e
    errors = cross_field_errors(cfg)
    if errors:
        raise ConfigurationError("invalid experiment config", errors)
    return cfg


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

def _set_path(doc: Dict[str, Any], path: List[str], value: Any) -> None:
    node: Any = doc
    for i, key in enumerate(path[:-1]):
        if isinstance(node, list):
            node = node[int(key)]
            continue
        if key not in node or not isinstance(node[key], (dict, list)):
            node[key] = [] if path[i + 1].isdigit() else {}
        node = node[key]
    last = path[-1]
    if isinstance(node, list):
        index = int(last)
        if index == len(node):
            node.append(value)
        else:
            node[index] = value
    else:
        node[last] = value


def apply_overrides(doc: Dict[str, Any], overrides: Optional[Sequence[str]]) -> Dict[str, Any]:
    """
    Apply ``a.b=c`` overrides to a raw document.

    Values are parsed with yaml.safe_load, so ``loss.gamma=0.5`` sets a float
    and ``eval.modes=[clean]`` a list. Numeric path parts index into lists.
    """
    errors = []
    for item in overrides or []:
        if "=" not in item:
            errors.append(f"override {item!r} is not of the form key=value")
            continue
        key, raw = item.split("=", 1)
        path = [p for p in key.strip().split(".") if p]
        if not path:
            errors.append(f"override {item!r} has an empty key")
            continue
        try:
            _set_path(doc, path, yaml.safe_load(raw))
        except (IndexError, ValueError, yaml.YAMLError) as e:
            errors.append(f"override {item!r}: {e}")
    if errors:
        raise ConfigurationError("invalid overrides", errors)
    return doc


def read_document(path: str) -> Dict[str, Any]:
    if not os.path.exists(path):
        raise ConfigurationError("config file not found", [path])
    try:
        with open(path, "r") as f:
            if path.endswith(".json"):
                doc = json.load(f)
            else:
                doc = yaml.safe_load(f)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        logger.error(f"Error parsing config {path}: {e}")
        raise ConfigurationError("config file is not valid JSON/YAML", [f"{path}: {e}"]) from e
    if not isinstance(doc, dict):
        raise ConfigurationError("config file must hold a mapping", [path])
    return doc


def load_config(path: Optional[str] = None, overrides: Optional[Sequence[str]] = None) -> ExperimentConfig:
    """
    Load, override and validate an experiment config.

    Args:
        path (Optional[str]): JSON or YAML file; ``config.json`` when omitted
        overrides (Optional[Sequence[str]]): Dotted ``key=value`` overrides

    Returns:
        ExperimentConfig: Validated config
    """
    path = path or DEFAULT_CONFIG
    doc = apply_overrides(read_document(path), overrides)
    cfg = validate_config(doc)
    logger.info(f"Loaded config {cfg.name} from {path} (hash {config_hash(cfg)})")
    return cfg


def config_hash(cfg: ExperimentConfig) -> str:
    """First 12 hex chars of sha256 over the canonical JSON dump; the output directory is left out."""
    payload = cfg.model_dump(mode="json", exclude={"output_dir"})
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def output_dir(cfg: ExperimentConfig) -> str:
    """The output directory, under $DEFERKIT_OUTPUT_ROOT when it is set and the path is relative."""
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not os.path.isabs(cfg.output_dir):
        return os.path.join(root, cfg.output_dir)
    return cfg.output_dir


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

def build_dataset(cfg: ExperimentConfig) -> Dataset:
    data = cfg.data
    if data.source == "blobs":
        return gen_blobs(data.K, data.d, data.n, data.separation, cfg.seed,
                         train_fraction=data.train_fraction, normalize=data.normalize)
    if data.source == "linear":
        return gen_linear_reg(data.d, data.n, data.noise_sigma, cfg.seed,
                              train_fraction=data.train_fraction, normalize=data.normalize)
    if data.source == "piecewise":
        return gen_piecewise_reg(data.n, cfg.seed, noise_sigma=data.noise_sigma, breakpoint=data.breakpoint,
                                 train_fraction=data.train_fraction)
    return load_csv(data.path, data.target_column, normalize=data.normalize, task=cfg.task,
                    train_fraction=data.train_fraction, seed=cfg.seed)


def build_panel(cfg: ExperimentConfig, dataset: Dataset) -> ExpertPanel:
    """Panel with outputs sampled on ``dataset``."""
    panel = ExpertPanel.from_config(cfg.panel.experts)
    seed = cfg.panel.seed if cfg.panel.seed is not None else cfg.seed
    sample_expert_outputs(panel, dataset, seed)
    return panel


def build_cost_model(cfg: ExperimentConfig, num_classes: int = 0) -> CostModel:
    if cfg.task == "classification":
        return CostModel.for_classification(num_classes, cfg.costs.expert_fees, alpha=cfg.costs.alpha,
                                            clamp_policy=cfg.costs.clamp_policy)
    return CostModel.for_regression(cfg.costs.expert_fees, predictor_fee=cfg.costs.predictor_fee,
                                    alpha=cfg.costs.alpha, base_loss=cfg.costs.base_loss)


def build_ball(cfg: ExperimentConfig) -> PerturbationBall:
    return PerturbationBall(p=cfg.loss.p, gamma=cfg.loss.gamma, box=cfg.perturbation_box())


def build_params(cfg: ExperimentConfig) -> SurrogateParams:
    return SurrogateParams(u=cfg.loss.u, rho=cfg.loss.rho, kappa=cfg.loss.kappa, certified=cfg.loss.certified)


def build_system(cfg: ExperimentConfig, dataset: Dataset):
    """Freshly initialized system sized for ``dataset``."""
    J = cfg.num_experts
    hidden, activation = cfg.model.hidden_sizes, cfg.model.activation
    if cfg.task == "classification":
        h = ScoreModel(dataset.d, dataset.num_classes + J, hidden, activation, seed=cfg.seed)
        return ClassificationSystem(h, dataset.num_classes, J)
    r = ScoreModel(dataset.d, J + 1, hidden, activation, seed=cfg.seed)
    f = ScoreModel(dataset.d, dataset.output_dim, hidden, activation, seed=cfg.seed + 1)
    return RegressionSystem(r, f, J)
