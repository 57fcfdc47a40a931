"""Pixelized return maps: point binning, exponential shading, augmentation.

A trajectory collection is flattened into a single-channel image by counting
the points that land in each pixel of a fixed state-space window and shading
pixel ``(h, w)`` as ``alpha ** count``. An untouched pixel is exactly 1.0 and
pixels darken geometrically with occupancy.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "RasterSpec",
    "AugmentLimits",
    "count_grid",
    "rasterize",
    "augment",
    "save_png",
    "HENON_WINDOW",
    "SAM_WINDOW",
    "DEFAULT_ALPHA",
]

DEFAULT_ALPHA = 0.7

# State-space windows. The Hénon window is the +-4 square the initial grid
# lives in. The SAM window is fixed across all mass ratios so the image scale
# cannot leak the parameter: r <= 1/(mu-1) <= 2 and |p_r| <= sqrt(2(1+mu))
# <= sqrt(32) for mu in [1.5, 15].
HENON_WINDOW = (-4.0, 4.0, -4.0, 4.0)
SAM_WINDOW = (0.0, 2.05, -5.7, 5.7)


@dataclass(frozen=True)
class RasterSpec:
    """State-space window, resolution and shading base of the pixel grid."""

    x_min: float = -4.0
    x_max: float = 4.0
    y_min: float = -4.0
    y_max: float = 4.0
    width: int = 128
    height: int = 128
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError("window must have positive extent")
        if self.width < 1 or self.height < 1:
            raise ValueError("resolution must be at least 1x1")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")


@dataclass(frozen=True)
class AugmentLimits:
    """Inclusive bounds for the random subsampling draws."""

    min_traj: int
    max_traj: int
    min_steps: int
    max_steps: int

    def __post_init__(self):
        if not (1 <= self.min_traj <= self.max_traj):
            raise ValueError("need 1 <= min_traj <= max_traj")
        if not (1 <= self.min_steps <= self.max_steps):
            raise ValueError("need 1 <= min_steps <= max_steps")


HENON_LIMITS = AugmentLimits(min_traj=10, max_traj=225, min_steps=10, max_steps=250)
SAM_LIMITS = AugmentLimits(min_traj=10, max_traj=256, min_steps=1, max_steps=250)


def _gather_points(trajectories: Iterable[np.ndarray]) -> np.ndarray:
    arrays = [np.asarray(t, dtype=float).reshape(-1, 2) for t in trajectories]
    if not arrays:
        return np.empty((0, 2))
    return np.concatenate(arrays, axis=0)


def count_grid(trajectories: Iterable[np.ndarray], spec: RasterSpec) -> np.ndarray:
    """Count trajectory points per pixel; returns an ``(H, W)`` int64 grid.

    Column index is ``floor((x - x_min) / (x_max - x_min) * W)`` and row 0 is
    the top of the window, so ``h = floor((y_max - y) / (y_max - y_min) * H)``.
    Points on the max-x or min-y edge clamp into the last valid index; points
    outside the window are ignored.
    """
    pts = _gather_points(trajectories)
    grid = np.zeros((spec.height, spec.width), dtype=np.int64)
    if pts.size == 0:
        return grid
    x, y = pts[:, 0], pts[:, 1]
    inside = (x >= spec.x_min) & (x <= spec.x_max) & (y >= spec.y_min) & (y <= spec.y_max)
    x, y = x[inside], y[inside]
    w = np.floor((x - spec.x_min) / (spec.x_max - spec.x_min) * spec.width).astype(np.int64)
    h = np.floor((spec.y_max - y) / (spec.y_max - spec.y_min) * spec.height).astype(np.int64)
    np.minimum(w, spec.width - 1, out=w)
    np.minimum(h, spec.height - 1, out=h)
    flat = np.bincount(h * spec.width + w, minlength=spec.height * spec.width)
    return flat.reshape(spec.height, spec.width).astype(np.int64)


def rasterize(trajectories: Iterable[np.ndarray], spec: RasterSpec) -> np.ndarray:
    """Shade the count grid: pixel ``(h, w)`` becomes ``alpha ** count``."""
    return spec.alpha ** count_grid(trajectories, spec).astype(float)


def augment(
    trajectories: Sequence[np.ndarray],
    limits: AugmentLimits,
    rng: np.random.Generator,
) -> list[np.ndarray]:
    """Random subsample of the collection: fewer trajectories, shorter prefixes.

    Draws a trajectory count uniformly on ``[min_traj, min(max_traj, n)]``,
    picks that many trajectories without replacement, draws a length uniformly
    on ``[min_steps, max_steps]`` and keeps only that long a prefix of each
    pick. Deterministic for a given generator state.
    """
    n = len(trajectories)
    if n == 0:
        raise ValueError("cannot augment an empty collection")
    hi = min(limits.max_traj, n)
    lo = min(limits.min_traj, hi)
    n_traj = int(rng.integers(lo, hi + 1))
    chosen = rng.choice(n, size=n_traj, replace=False)
    n_steps = int(rng.integers(limits.min_steps, limits.max_steps + 1))
    return [np.asarray(trajectories[i])[:n_steps] for i in chosen]


def save_png(image: np.ndarray, path) -> None:
    """Write a shaded image as 8-bit grayscale, 255 = empty pixel."""
    from PIL import Image

    arr = np.round(255.0 * np.asarray(image)).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PNG")
