"""
Adaptive moment estimation over flat parameter vectors.
"""
import logging

import numpy as np

from deferkit.errors import ContractViolation

logger = logging.getLogger(__name__)


class Adam:
    """Per-coordinate first and second moment estimates with bias correction."""

    def __init__(self, num_parameters: int, learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if learning_rate <= 0:
            raise ContractViolation(f"learning_rate must be positive, got {learning_rate}")
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(num_parameters)
        self.v = np.zeros(num_parameters)
        self.t = 0

    def step(self, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
        """Return the updated parameter vector; moments are updated in place."""
        if grads.shape != self.m.shape:
            raise ContractViolation(f"gradient has shape {grads.shape}, expected {self.m.shape}")
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grads ** 2
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return params - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)
