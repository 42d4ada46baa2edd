"""
Score models and their checkpoints.

A ScoreModel is a stack of affine layers with ReLU or tanh between them.
It maps a batch of feature vectors to one score per action: K+J scores for
a classifier h, J+1 for a rejector r, m for a predictor f.
"""
import hashlib
import itertools
import json
import logging
import os
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from deferkit.diffcore import tensor as T
from deferkit.errors import CheckpointError, ContractViolation, InputShapeError

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = "deferkit-model-v1"
ACTIVATIONS = ("relu", "tanh")

ArrayLikeT = Union[Sequence[float], np.ndarray]

_uid_counter = itertools.count()


class ScoreModel:
    """Feed-forward score map R^input_dim -> R^output_dim."""

    def __init__(self,
                 input_dim: int,
                 output_dim: int,
                 hidden_sizes: Sequence[int] = (),
                 activation: str = "relu",
                 seed: int = 0,
                 init_scale: Optional[float] = None):
        """
        Initialize a model with seeded random weights.

        Args:
            input_dim (int): Feature dimension d
            output_dim (int): Number of scores produced
            hidden_sizes (Sequence[int]): Widths of hidden layers; empty for a linear model
            activation (str): Nonlinearity between layers, "relu" or "tanh"
            seed (int): Seed for weight initialization
            init_scale (Optional[float]): Std of initial weights; defaults to 1/sqrt(fan_in)
        """
        if input_dim < 1 or output_dim < 1:
            raise ContractViolation("input_dim and output_dim must be positive")
        if activation not in ACTIVATIONS:
            raise ContractViolation(f"activation must be one of {ACTIVATIONS}, got {activation!r}")
        self.input_dim = int(input_dim)
        self.output_dim = int(output_dim)
        self.hidden_sizes = [int(h) for h in hidden_sizes]
        self.activation = activation
        self.uid = next(_uid_counter)

        rng = np.random.default_rng(seed)
        sizes = [self.input_dim] + self.hidden_sizes + [self.output_dim]
        self.weights: List[np.ndarray] = []
        self.biases: List[np.ndarray] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            scale = init_scale if init_scale is not None else 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.normal(0.0, scale, size=(fan_out, fan_in)))
            self.biases.append(np.zeros(fan_out))

    @classmethod
    def from_arrays(cls, weights: Sequence[ArrayLikeT], biases: Sequence[ArrayLikeT],
                    activation: str = "relu") -> "ScoreModel":
        """Build a model with explicit parameters, e.g. W=[[1,0],[0,1]], b=[0,0]."""
        weights = [np.atleast_2d(np.asarray(w, dtype=np.float64)) for w in weights]
        biases = [np.atleast_1d(np.asarray(b, dtype=np.float64)) for b in biases]
        if len(weights) != len(biases) or not weights:
            raise ContractViolation("need one bias per weight matrix")
        for w, b in zip(weights, biases):
            if w.shape[0] != b.shape[0]:
                raise ContractViolation(f"weight {w.shape} and bias {b.shape} disagree")
        for w_prev, w_next in zip(weights[:-1], weights[1:]):
            if w_prev.shape[0] != w_next.shape[1]:
                raise ContractViolation("consecutive layer sizes do not chain")
        model = cls(weights[0].shape[1], weights[-1].shape[0],
                    hidden_sizes=[w.shape[0] for w in weights[:-1]], activation=activation)
        model.weights = [w.copy() for w in weights]
        model.biases = [b.copy() for b in biases]
        return model

    # -- parameters --------------------------------------------------------

    def parameters(self) -> List[np.ndarray]:
        """Parameter arrays in stable order W0, b0, W1, b1, ..."""
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend([w, b])
        return params

    @property
    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    def set_flat_parameters(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.num_parameters:
            raise ContractViolation(f"expected {self.num_parameters} values, got {flat.size}")
        offset = 0
        for layer in range(len(self.weights)):
            for attr in ("weights", "biases"):
                current = getattr(self, attr)[layer]
                getattr(self, attr)[layer] = flat[offset:offset + current.size].reshape(current.shape).copy()
                offset += current.size

    def clone(self) -> "ScoreModel":
        twin = ScoreModel.from_arrays(self.weights, self.biases, activation=self.activation)
        return twin

    def fingerprint(self) -> str:
        """sha256 of the architecture and parameter bytes."""
        digest = hashlib.sha256()
        digest.update(f"{self.input_dim}|{self.hidden_sizes}|{self.output_dim}|{self.activation}".encode())
        for p in self.parameters():
            digest.update(np.ascontiguousarray(p).tobytes())
        return digest.hexdigest()

    # -- evaluation --------------------------------------------------------

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise InputShapeError(f"model expects inputs of length {self.input_dim}, got shape {x.shape}")
        return x

    def scores(self, x: np.ndarray) -> np.ndarray:
        """Plain numpy forward pass with no graph; 1-D input gives 1-D output."""
        raw = np.asarray(x, dtype=np.float64)
        h = self._check_input(raw)
        for layer, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.T + b
            if layer < len(self.weights) - 1:
                h = np.maximum(h, 0.0) if self.activation == "relu" else np.tanh(h)
        return h[0] if raw.ndim == 1 else h

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.scores(x)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "hidden_sizes": list(self.hidden_sizes),
            "activation": self.activation,
            "params": [p.tolist() for p in self.parameters()],
        }

    @classmethod
    def from_dict(cls, spec: Dict[str, Any]) -> "ScoreModel":
        params = spec["params"]
        weights = params[0::2]
        biases = params[1::2]
        model = cls.from_arrays(weights, biases, activation=spec.get("activation", "relu"))
        if model.input_dim != spec["input_dim"] or model.output_dim != spec["output_dim"]:
            raise CheckpointError("layer shapes disagree with recorded dimensions")
        return model


def forward(model: ScoreModel, x: Union[T.Node, np.ndarray]) -> T.Node:
    """
    Build the graph of ``model`` applied to ``x``.

    Args:
        model (ScoreModel): The model to evaluate
        x (Node or ndarray): One input of length input_dim or a batch (n, input_dim)

    Returns:
        Node: Scores, shape (output_dim,) for a single input or (n, output_dim)
    """
    x_node = T.lift(x)
    single = x_node.ndim == 1
    if single:
        x_node = T.expand(x_node, 0)
    if x_node.ndim != 2 or x_node.shape[1] != model.input_dim:
        raise InputShapeError(f"model expects inputs of length {model.input_dim}, got shape {x_node.shape}")

    h = x_node
    leaves = [T.variable(p, tag=(model.uid, i)) for i, p in enumerate(model.parameters())]
    for layer in range(len(model.weights)):
        h = T.affine(h, leaves[2 * layer], leaves[2 * layer + 1])
        if layer < len(model.weights) - 1:
            h = T.relu(h) if model.activation == "relu" else T.tanh(h)
    if single:
        h = T.reshape(h, (model.output_dim,))
    return h


def grad_wrt_models(loss: T.Node, models: Sequence[ScoreModel]) -> List[np.ndarray]:
    """Flat parameter gradients for several models from one backward pass."""
    order = T.backward(loss)
    grads = {m.uid: [np.zeros_like(p) for p in m.parameters()] for m in models}
    for node in order:
        if node.op == "leaf" and isinstance(node.tag, tuple) and node.tag[0] in grads:
            if node.grad is not None:
                grads[node.tag[0]][node.tag[1]] += node.grad
    return [np.concatenate([g.ravel() for g in grads[m.uid]]) for m in models]


def grad_wrt_params(loss: T.Node, model: ScoreModel) -> np.ndarray:
    """
    Gradient of a scalar loss with respect to every parameter of ``model``.

    Blocks the loss does not depend on come back as zeros. Parameters used
    by several forward calls inside the loss have their gradients summed.
    """
    return grad_wrt_models(loss, [model])[0]


def grad_wrt_input(loss: T.Node, x: T.Node) -> np.ndarray:
    """Gradient of a scalar loss with respect to the input node ``x``."""
    if not x.requires_grad:
        raise ContractViolation("input node was not created with variable()")
    T.backward(loss)
    return np.zeros_like(x.value) if x.grad is None else x.grad.copy()


def save_checkpoint(path: str, models: Dict[str, ScoreModel], task: str,
                    config_hash: str = "", extra: Optional[Dict[str, Any]] = None) -> str:
    """
    Write models to a JSON checkpoint.

    The document carries no timestamps, so equal models give equal bytes.
    """
    document = {
        "version": CHECKPOINT_VERSION,
        "config_hash": config_hash,
        "task": task,
        "models": {name: model.to_dict() for name, model in sorted(models.items())},
    }
    if extra:
        document["extra"] = extra
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w") as f:
        json.dump(document, f, indent=2, sort_keys=True)
    logger.info(f"Checkpoint saved to: {path}")
    return path


def load_checkpoint(path: str, task: Optional[str] = None) -> Tuple[Dict[str, ScoreModel], Dict[str, Any]]:
    """Read a checkpoint; returns (models by name, full document)."""
    try:
        with open(path, "r") as f:
            document = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        logger.error(f"Could not read checkpoint {path}: {e}")
        raise CheckpointError(f"could not read checkpoint {path}: {e}") from e
    if document.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {document.get('version')!r}")
    if task is not None and document.get("task") != task:
        raise CheckpointError(f"checkpoint is for task {document.get('task')!r}, expected {task!r}")
    models = {name: ScoreModel.from_dict(spec) for name, spec in document["models"].items()}
    return models, document
