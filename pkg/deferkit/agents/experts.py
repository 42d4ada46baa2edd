"""
Simulated expert panels.

Experts are fixed conditional distributions over outputs given (x, y).
A panel samples every expert once per dataset and caches the result so
training epochs and evaluations always see the same expert outputs.
"""
import logging
import os
from typing import Any, List, Literal, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, model_validator

from deferkit.errors import ConfigurationError, ContractViolation

logger = logging.getLogger(__name__)

CLASSIFICATION_KINDS = ("class_specialist", "class_bernoulli")
REGRESSION_KINDS = ("reg_specialist", "reg_noisy")


class FeatureRegion(BaseModel):
    """Interval lo <= x[feature] < hi where a regression specialist is sharp."""
    feature: int = Field(0, ge=0)
    lo: float = float("-inf")
    hi: float = float("inf")


class ExpertSpec(BaseModel):
    """One simulated expert."""
    kind: Literal["class_specialist", "class_bernoulli", "reg_specialist", "reg_noisy"]
    id: int = Field(..., ge=1, description="Expert number j in 1..J")
    p: float = Field(0.85, ge=0.0, le=1.0, description="Probability of a correct label")
    classes: Optional[List[int]] = Field(None, description="Classes a specialist knows; None means all")
    sigma: float = Field(0.0, ge=0.0, description="Noise scale of reg_noisy")
    sigma_in: float = Field(0.0, ge=0.0, description="Noise inside the specialist region")
    sigma_out: float = Field(1.0, ge=0.0, description="Noise outside the specialist region")
    region: Optional[FeatureRegion] = None

    @model_validator(mode="after")
    def _region_only_for_specialists(self):
        if self.region is not None and self.kind != "reg_specialist":
            raise ValueError("region is only meaningful for reg_specialist experts")
        return self

    @property
    def task(self) -> str:
        return "classification" if self.kind in CLASSIFICATION_KINDS else "regression"


class ExpertPanel:
    """A list of experts plus their cached outputs on one dataset."""

    def __init__(self, experts: List[ExpertSpec]):
        """
        Initialize the panel.

        Args:
            experts (List[ExpertSpec]): Experts numbered 1..J in order
        """
        ids = [e.id for e in experts]
        if ids != list(range(1, len(experts) + 1)):
            raise ConfigurationError("invalid expert panel", [f"expert ids must be 1..J in order, got {ids}"])
        self.experts = list(experts)
        self.cache: Optional[np.ndarray] = None
        self.seed: Optional[int] = None

    @classmethod
    def from_config(cls, block: List[Any]) -> "ExpertPanel":
        return cls([e if isinstance(e, ExpertSpec) else ExpertSpec(**e) for e in block])

    @property
    def size(self) -> int:
        return len(self.experts)

    def outputs(self, index: Optional[np.ndarray] = None) -> np.ndarray:
        """Cached outputs, optionally restricted to some example indices."""
        if self.cache is None:
            raise ContractViolation("expert outputs have not been sampled yet")
        return self.cache if index is None else self.cache[index]

    def check_task(self, task: str) -> None:
        wrong = [f"expert {e.id} is {e.kind}, incompatible with {task}"
                 for e in self.experts if e.task != task]
        if wrong:
            raise ConfigurationError("expert panel does not match the task", wrong)


def _uniform_labels(rng: np.random.Generator, n: int, num_classes: int) -> np.ndarray:
    return rng.integers(0, num_classes, size=n)


def _sample_classification(expert: ExpertSpec, labels: np.ndarray, num_classes: int,
                           rng: np.random.Generator) -> np.ndarray:
    n = labels.shape[0]
    draws = rng.random(n)
    noise = _uniform_labels(rng, n, num_classes)
    correct = draws < expert.p
    if expert.kind == "class_specialist":
        known = np.ones(n, dtype=bool) if expert.classes is None else np.isin(labels, expert.classes)
        return np.where(known & correct, labels, noise)
    # class_bernoulli: a wrong answer is uniform over the other K-1 labels
    wrong = (labels + 1 + rng.integers(0, max(num_classes - 1, 1), size=n)) % num_classes
    return np.where(correct, labels, wrong)


def _sample_regression(expert: ExpertSpec, features: np.ndarray, targets: np.ndarray,
                       rng: np.random.Generator) -> np.ndarray:
    eps = rng.standard_normal(targets.shape)
    if expert.kind == "reg_noisy":
        scale = np.full(targets.shape[0], expert.sigma)
    else:
        region = expert.region or FeatureRegion()
        column = features[:, region.feature]
        inside = (column >= region.lo) & (column < region.hi)
        scale = np.where(inside, expert.sigma_in, expert.sigma_out)
    return targets + scale[:, None] * eps


def sample_expert_outputs(panel: ExpertPanel, dataset, seed: int) -> np.ndarray:
    """
    Sample and cache every expert's output on every example.

    Args:
        panel (ExpertPanel): The panel to fill
        dataset (Dataset): Features and targets
        seed (int): Seed; each expert draws from its own stream keyed by (seed, id)

    Returns:
        ndarray: (n, J) labels for classification, (n, J, m) for regression
    """
    if dataset.n == 0:
        raise ContractViolation("cannot sample experts on an empty dataset")
    panel.check_task(dataset.task)

    columns = []
    for expert in panel.experts:
        rng = np.random.default_rng([seed, expert.id])
        if dataset.task == "classification":
            columns.append(_sample_classification(expert, dataset.targets, dataset.num_classes, rng))
        else:
            columns.append(_sample_regression(expert, dataset.features, dataset.targets, rng))

    if dataset.task == "classification":
        cache = np.stack(columns, axis=1).astype(int) if columns else np.zeros((dataset.n, 0), dtype=int)
    else:
        m = dataset.targets.shape[1]
        cache = np.stack(columns, axis=1) if columns else np.zeros((dataset.n, 0, m))
    panel.cache = cache
    panel.seed = seed
    logger.info(f"Sampled {panel.size} experts on {dataset.n} examples (seed={seed})")
    return cache


def export_cache(panel: ExpertPanel, path: str, config_hash: str = "") -> str:
    """Write the cache as CSV with columns example_id, expert_id, output."""
    cache = panel.outputs()
    rows = []
    for i in range(cache.shape[0]):
        for e in range(cache.shape[1]):
            value = cache[i, e]
            if np.ndim(value) == 0:
                output = int(value) if cache.dtype.kind == "i" else repr(float(value))
            else:
                output = ";".join(repr(float(v)) for v in np.ravel(value))
            rows.append({"example_id": i, "expert_id": e + 1, "output": output})
    frame = pd.DataFrame(rows, columns=["example_id", "expert_id", "output"])
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w") as f:
        f.write(f"# config_hash={config_hash}\n")
        frame.to_csv(f, index=False)
    logger.info(f"Expert cache exported to: {path}")
    return path
