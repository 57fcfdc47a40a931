"""Weighted squared-error regression loss.

Each parameter axis is scaled so the training range maps onto [-5, 5]; the
loss is half the squared error of the scaled residuals, summed over axes and
averaged over the batch. With one parameter this is plain rescaled MSE.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["LossWeights", "weighted_mse", "HENON_LOSS", "SAM_LOSS"]


@dataclass(frozen=True)
class LossWeights:
    """Per-parameter scale (and the range midpoints the scales come from)."""

    sigma: tuple
    mid: tuple

    def __post_init__(self):
        if len(self.sigma) != len(self.mid):
            raise ValueError("sigma and mid must have the same length")
        if any(s <= 0 for s in self.sigma):
            raise ValueError("sigma entries must be positive")

    @property
    def dim(self) -> int:
        return len(self.sigma)


# scale = 5 / half-range: a in [0.05, 0.45] -> 25, b in [-1.1, 1.1] -> 50/11,
# mass ratio in [1.5, 15] -> 20/27
HENON_LOSS = LossWeights(sigma=(25.0, 50.0 / 11.0), mid=(0.25, 0.0))
SAM_LOSS = LossWeights(sigma=(20.0 / 27.0,), mid=(8.25,))


def weighted_mse(pred, target, weights: LossWeights):
    """Return ``(loss, dloss/dpred)``.

    loss = mean over the batch of 0.5 * sum_j sigma_j^2 (pred_j - target_j)^2
    """
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.ndim == 1:
        pred = pred[None]
    if target.ndim == 1:
        target = target[None]
    if pred.shape != target.shape or pred.shape[1] != weights.dim:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    sigma_sq = np.asarray(weights.sigma, dtype=float) ** 2
    err = pred - target
    n = pred.shape[0]
    loss = float(0.5 * np.sum(sigma_sq * err * err) / n)
    grad = sigma_sq * err / n
    return loss, grad
