"""
Perturbation balls, projection and attack plans.
"""
import itertools
import logging
from typing import Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

logger = logging.getLogger(__name__)


class PerturbationBall(BaseModel):
    """B_p(x, gamma) intersected with an optional per-feature box [lo, hi]."""
    p: Union[int, str] = Field(2, description="Norm order: 2 or 'inf'")
    gamma: float = Field(0.0, ge=0, description="Radius")
    box: Optional[Tuple[float, float]] = Field(None, description="Global clip range applied after projection "
                                                                 "when gamma > 0")

    @field_validator("p", mode="before")
    @classmethod
    def _normalize_p(cls, value):
        if isinstance(value, str) and value.lower() in ("inf", "infinity", "linf"):
            return "inf"
        if isinstance(value, float) and np.isinf(value):
            return "inf"
        if value in (2, "2", 2.0):
            return 2
        raise ValueError(f"p must be 2 or 'inf', got {value!r}")

    @model_validator(mode="after")
    def _box_ordered(self):
        if self.box is not None and not self.box[0] < self.box[1]:
            raise ValueError(f"box must satisfy lo < hi, got {self.box}")
        return self

    @property
    def is_inf(self) -> bool:
        return self.p == "inf"

    def distance(self, point: np.ndarray, center: np.ndarray) -> np.ndarray:
        delta = np.asarray(point, dtype=np.float64) - np.asarray(center, dtype=np.float64)
        if self.is_inf:
            return np.max(np.abs(delta), axis=-1)
        return np.sqrt(np.sum(delta ** 2, axis=-1))

    def contains(self, point: np.ndarray, center: np.ndarray, tol: float = 1e-9) -> bool:
        point = np.asarray(point, dtype=np.float64)
        inside = np.all(self.distance(point, center) <= self.gamma + tol)
        if self.box is not None and self.gamma > 0:
            inside = inside and np.all(point >= self.box[0]) and np.all(point <= self.box[1])
        return bool(inside)


class AttackPlan(BaseModel):
    """Configuration of the inner maximization."""
    steps: int = Field(10, ge=0, description="Projected-gradient steps T")
    step_size: Optional[float] = Field(None, gt=0, description="Defaults to 2.5 * gamma / T")
    init: Literal["center", "random_uniform"] = "center"
    restarts: int = Field(1, ge=0, description="Extra runs from random starts")
    seed: int = 0
    grid_resolution: int = Field(0, ge=0, description="Dense candidate grid per axis (input dim <= 2)")

    def resolved_step_size(self, gamma: float) -> float:
        if self.step_size is not None:
            return self.step_size
        return 2.5 * gamma / max(self.steps, 1)


def project(candidate: np.ndarray, center: np.ndarray, ball: PerturbationBall) -> np.ndarray:
    """
    Nearest point of the ball to ``candidate``, then clipped into the box.

    At gamma = 0 the ball is the center alone and the box is not applied.

    Works row-wise on batches: coordinate clamp for p=inf, radial scaling for p=2.
    """
    candidate = np.asarray(candidate, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    delta = candidate - center
    if ball.gamma == 0:
        delta = np.zeros_like(delta)
    elif ball.is_inf:
        delta = np.clip(delta, -ball.gamma, ball.gamma)
    else:
        norms = np.sqrt(np.sum(delta ** 2, axis=-1, keepdims=True))
        scale = np.minimum(1.0, ball.gamma / np.where(norms > 0, norms, 1.0))
        delta = delta * scale
    out = center + delta
    if ball.box is not None and ball.gamma > 0:
        out = np.clip(out, ball.box[0], ball.box[1])
    return out


def random_in_ball(center: np.ndarray, ball: PerturbationBall, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw from the ball around every row of ``center``."""
    center = np.atleast_2d(np.asarray(center, dtype=np.float64))
    n, d = center.shape
    if ball.gamma == 0:
        return center.copy()
    if ball.is_inf:
        delta = rng.uniform(-ball.gamma, ball.gamma, size=(n, d))
    else:
        direction = rng.standard_normal((n, d))
        direction /= np.maximum(np.linalg.norm(direction, axis=1, keepdims=True), 1e-300)
        radius = ball.gamma * rng.random((n, 1)) ** (1.0 / d)
        delta = direction * radius
    return project(center + delta, center, ball)


def candidate_offsets(dim: int, ball: PerturbationBall, grid_resolution: int = 0) -> np.ndarray:
    """
    Deterministic offsets evaluated around every center.

    Always the center itself; for dim <= 2 also the ball's extreme points
    (cube vertices for p=inf, axis and diagonal points for p=2) and an
    optional dense grid.
    """
    offsets = [np.zeros(dim)]
    if ball.gamma > 0 and dim <= 2:
        g = ball.gamma
        if ball.is_inf:
            offsets.extend(g * np.array(corner) for corner in itertools.product((-1.0, 1.0), repeat=dim))
        else:
            for axis in range(dim):
                for sign in (-1.0, 1.0):
                    e = np.zeros(dim)
                    e[axis] = sign * g
                    offsets.append(e)
            if dim == 2:
                offsets.extend(g / np.sqrt(2.0) * np.array(c) for c in itertools.product((-1.0, 1.0), repeat=2))
        if grid_resolution > 0:
            axis_points = np.linspace(-g, g, grid_resolution)
            grid = np.array(list(itertools.product(axis_points, repeat=dim)))
            if not ball.is_inf:
                grid = grid[np.sqrt(np.sum(grid ** 2, axis=1)) <= g + 1e-12]
            offsets.extend(grid)
    return np.array(offsets)


def ball_candidates(x: np.ndarray, ball: PerturbationBall, plan: Optional[AttackPlan] = None) -> np.ndarray:
    """Candidate points for a batch of centers, shape (n, P, d)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    resolution = plan.grid_resolution if plan is not None else 0
    offsets = candidate_offsets(x.shape[1], ball, resolution)
    points = x[:, None, :] + offsets[None, :, :]
    return project(points, x[:, None, :], ball)
