"""
In-memory datasets with a train/test split and a per-feature affine normalization.
"""
import logging
import os
from typing import Any, Dict, Optional, Tuple

import numpy as np
import pandas as pd

from deferkit.errors import ConfigurationError, ContractViolation

logger = logging.getLogger(__name__)

NORMALIZATIONS = ("zscore", "minmax", "none")


class Normalization:
    """x_normalized = (x - shift) / scale, fitted on the training split only."""

    def __init__(self, kind: str, shift: np.ndarray, scale: np.ndarray):
        if kind not in NORMALIZATIONS:
            raise ConfigurationError("invalid normalization", [f"normalize must be one of {NORMALIZATIONS}"])
        self.kind = kind
        self.shift = np.asarray(shift, dtype=np.float64)
        self.scale = np.asarray(scale, dtype=np.float64)

    @classmethod
    def fit(cls, kind: str, features: np.ndarray) -> "Normalization":
        d = features.shape[1]
        if kind == "zscore":
            shift = features.mean(axis=0)
            scale = features.std(axis=0)
        elif kind == "minmax":
            shift = features.min(axis=0)
            scale = features.max(axis=0) - shift
        else:
            shift, scale = np.zeros(d), np.ones(d)
        scale = np.where(scale > 0, scale, 1.0)
        return cls(kind, shift, scale)

    def transform(self, features: np.ndarray) -> np.ndarray:
        return (features - self.shift) / self.scale

    def inverse(self, features: np.ndarray) -> np.ndarray:
        return features * self.scale + self.shift

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "shift": self.shift.tolist(), "scale": self.scale.tolist()}


def split_indices(n: int, train_fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Seeded disjoint train/test index sets; both sorted."""
    if not 0 < train_fraction <= 1:
        raise ConfigurationError("invalid split", [f"train_fraction must be in (0, 1], got {train_fraction}"])
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(n * train_fraction))
    if n > 1 and train_fraction < 1:
        n_train = min(max(n_train, 1), n - 1)
    return np.sort(order[:n_train]), np.sort(order[n_train:])


class Dataset:
    """Features, targets, a split and the normalization applied to the features."""

    def __init__(self,
                 features: np.ndarray,
                 targets: np.ndarray,
                 task: str,
                 train_idx: np.ndarray,
                 test_idx: np.ndarray,
                 normalization: Optional[Normalization] = None,
                 num_classes: int = 0,
                 meta: Optional[Dict[str, Any]] = None):
        """
        Initialize the dataset.

        Args:
            features (ndarray): (n, d) normalized features
            targets (ndarray): (n,) integer labels or (n, m) real targets
            task (str): "classification" or "regression"
            train_idx (ndarray): Training indices
            test_idx (ndarray): Test indices, disjoint from train_idx
            normalization (Optional[Normalization]): Transform already applied to ``features``
            num_classes (int): K for classification
            meta (Optional[Dict]): Generator parameters, e.g. the true weights w*
        """
        self.features = np.asarray(features, dtype=np.float64)
        if task == "classification":
            self.targets = np.asarray(targets, dtype=int).ravel()
        else:
            targets = np.asarray(targets, dtype=np.float64)
            self.targets = targets.reshape(targets.shape[0], -1)
        self.task = task
        self.train_idx = np.asarray(train_idx, dtype=int)
        self.test_idx = np.asarray(test_idx, dtype=int)
        d = self.features.shape[1] if self.features.ndim == 2 else 0
        self.normalization = normalization or Normalization("none", np.zeros(d), np.ones(d))
        self.num_classes = int(num_classes)
        self.meta = dict(meta or {})
        if np.intersect1d(self.train_idx, self.test_idx).size:
            raise ContractViolation("train and test splits overlap")

    @property
    def n(self) -> int:
        return int(self.features.shape[0])

    @property
    def d(self) -> int:
        return int(self.features.shape[1])

    @property
    def output_dim(self) -> int:
        return 1 if self.task == "classification" else int(self.targets.shape[1])

    def split(self, name: str) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(indices, features, targets) of the "train", "test" or "all" split."""
        if name == "train":
            idx = self.train_idx
        elif name == "test":
            idx = self.test_idx
        elif name == "all":
            idx = np.arange(self.n)
        else:
            raise ContractViolation(f"unknown split {name!r}")
        return idx, self.features[idx], self.targets[idx]

    def raw_features(self) -> np.ndarray:
        """Features mapped back through the inverse normalization."""
        return self.normalization.inverse(self.features)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.features, columns=[f"x{i}" for i in range(self.d)])
        if self.task == "classification":
            frame["y"] = self.targets
        else:
            for k in range(self.targets.shape[1]):
                frame[f"t{k}"] = self.targets[:, k]
        frame["split"] = "train"
        frame.loc[self.test_idx, "split"] = "test"
        return frame

    def save_csv(self, path: str, config_hash: str = "") -> str:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "w") as f:
            f.write(f"# config_hash={config_hash}\n")
            self.to_frame().to_csv(f, index=False)
        logger.info(f"Dataset written to: {path} ({self.n} rows)")
        return path
