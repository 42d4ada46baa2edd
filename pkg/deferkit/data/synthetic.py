"""
Synthetic benchmarks: Gaussian blobs for classification, linear and
piecewise targets for regression.
"""
import logging

import numpy as np

from deferkit.data.dataset import Dataset, Normalization, split_indices
from deferkit.errors import ContractViolation

logger = logging.getLogger(__name__)


def _finish(features, targets, task, train_fraction, seed, normalize, num_classes=0, meta=None) -> Dataset:
    train_idx, test_idx = split_indices(features.shape[0], train_fraction, seed)
    normalization = Normalization.fit(normalize, features[train_idx])
    return Dataset(normalization.transform(features), targets, task, train_idx, test_idx,
                   normalization=normalization, num_classes=num_classes, meta=meta)


def blob_centers(K: int, d: int, separation: float) -> np.ndarray:
    """K centers on a circle of radius ``separation`` in the first two axes (a line when d = 1)."""
    centers = np.zeros((K, d))
    if d == 1:
        centers[:, 0] = separation * np.arange(K)
    else:
        angles = 2.0 * np.pi * np.arange(K) / K
        centers[:, 0] = separation * np.cos(angles)
        centers[:, 1] = separation * np.sin(angles)
    return centers


def gen_blobs(K: int, d: int, n: int, separation: float, seed: int,
              train_fraction: float = 0.8, normalize: str = "none") -> Dataset:
    """
    K unit-variance Gaussian clusters labelled by cluster.

    Args:
        K (int): Number of classes, at least 2
        d (int): Feature dimension, at least 1
        n (int): Number of examples, at least 1
        separation (float): Radius of the circle carrying the centers
        seed (int): Seed for sampling and splitting
        train_fraction (float): Share of examples in the training split
        normalize (str): "zscore", "minmax" or "none"

    Returns:
        Dataset: Classification dataset
    """
    if K < 2 or d < 1:
        raise ContractViolation(f"need K >= 2 and d >= 1, got K={K}, d={d}")
    if n < 1:
        raise ContractViolation("cannot generate an empty dataset (n=0)")
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, K, size=n)
    centers = blob_centers(K, d, separation)
    features = centers[labels] + rng.standard_normal((n, d))
    logger.info(f"Generated blobs: K={K}, d={d}, n={n}, separation={separation}")
    return _finish(features, labels, "classification", train_fraction, seed, normalize,
                   num_classes=K, meta={"generator": "blobs", "centers": centers.tolist()})


def gen_linear_reg(d: int, n: int, noise_sigma: float, seed: int,
                   train_fraction: float = 0.8, normalize: str = "none") -> Dataset:
    """t = <w*, x> + noise_sigma * eps with w* recorded in ``meta["w_star"]``."""
    if d < 1:
        raise ContractViolation(f"need d >= 1, got {d}")
    if n < 1:
        raise ContractViolation("cannot generate an empty dataset (n=0)")
    rng = np.random.default_rng(seed)
    w_star = rng.standard_normal(d)
    features = rng.standard_normal((n, d))
    targets = features @ w_star + noise_sigma * rng.standard_normal(n)
    logger.info(f"Generated linear regression: d={d}, n={n}, noise={noise_sigma}")
    return _finish(features, targets[:, None], "regression", train_fraction, seed, normalize,
                   meta={"generator": "linear", "w_star": w_star.tolist()})


def gen_piecewise_reg(n: int, seed: int, noise_sigma: float = 0.05, breakpoint: float = 0.0,
                      train_fraction: float = 0.8) -> Dataset:
    """
    1-D benchmark with a hard region.

    t = 0.5 x on x < breakpoint and 0.5 x + sin(6 x) beyond it, x uniform on
    [-1, 1]. A linear predictor fits the left part only; a specialist expert
    sharp on the right part is worth consulting there.
    """
    if n < 1:
        raise ContractViolation("cannot generate an empty dataset (n=0)")
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, size=(n, 1))
    bump = np.where(x[:, 0] >= breakpoint, np.sin(6.0 * x[:, 0]), 0.0)
    targets = 0.5 * x[:, 0] + bump + noise_sigma * rng.standard_normal(n)
    return _finish(x, targets[:, None], "regression", train_fraction, seed, "none",
                   meta={"generator": "piecewise", "breakpoint": breakpoint})
