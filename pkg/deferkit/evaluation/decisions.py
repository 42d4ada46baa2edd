"""
Decision rules of deferral systems.

Ties go to the lowest action index (numpy argmax), not to a uniform draw.
"""
import logging
from typing import Tuple, Union

import numpy as np

from deferkit.diffcore.model import ScoreModel
from deferkit.errors import NonFiniteError

logger = logging.getLogger(__name__)


def _argmax(scores: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(scores)):
        raise NonFiniteError("cannot decide on non-finite scores")
    return np.argmax(scores, axis=-1)


def decide_class(h: ScoreModel, x: np.ndarray) -> Union[int, np.ndarray]:
    """
    argmax over the K + J scores of h.

    Args:
        h (ScoreModel): Classifier over the augmented action space
        x (ndarray): One input (d,) or a batch (n, d)

    Returns:
        int or ndarray: Action index; < K predicts that class, >= K defers to expert j - K
    """
    actions = _argmax(h.scores(np.asarray(x, dtype=np.float64)))
    return int(actions) if np.ndim(actions) == 0 else actions


def decide_reg(r: ScoreModel, f: ScoreModel, x: np.ndarray, m) -> Tuple:
    """
    argmax of the rejector, then the predictor's value or the consulted expert's output.

    ``m`` holds the expert outputs of the example(s): (J,) or (J, m_out) for a
    single input, (n, J, m_out) for a batch. A single input gives
    ``(action, output)`` with a float output when the target is scalar.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    n = X.shape[0]
    actions = _argmax(r.scores(X))
    predictions = f.scores(X).reshape(n, -1)
    experts = np.asarray(m, dtype=np.float64).reshape(n, r.output_dim - 1, -1)
    outputs = predictions.copy()
    deferred = actions > 0
    outputs[deferred] = experts[np.flatnonzero(deferred), actions[deferred] - 1]
    if single:
        output = outputs[0]
        return int(actions[0]), (float(output[0]) if output.size == 1 else output)
    return actions, outputs


def class_correct(actions: np.ndarray, y: np.ndarray, m: np.ndarray, num_classes: int) -> np.ndarray:
    """A prediction is correct when it is the label; a deferral when the consulted expert is."""
    actions = np.asarray(actions, dtype=int)
    y = np.asarray(y, dtype=int)
    m = np.asarray(m, dtype=int).reshape(y.shape[0], -1)
    deferred = actions >= num_classes
    expert_answer = m[np.arange(y.shape[0]), np.where(deferred, actions - num_classes, 0)] if m.shape[1] else y
    return np.where(deferred, expert_answer == y, actions == y)


def rmse(outputs: np.ndarray, targets: np.ndarray) -> float:
    """Root of the mean squared Euclidean error."""
    diff = np.asarray(outputs, dtype=np.float64) - np.asarray(targets, dtype=np.float64)
    if diff.size == 0:
        return 0.0
    return float(np.sqrt(np.mean(np.sum(diff.reshape(diff.shape[0], -1) ** 2, axis=1))))
