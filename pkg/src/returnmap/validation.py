"""Input validation helpers for the estimator API.

Trajectory collections are ragged (lists of (m, 2) arrays), so the sklearn
array validators do not apply; these helpers normalize and check the nested
structure instead.
"""

from __future__ import annotations

import numpy as np

__all__ = ["check_trajectories", "check_collections", "check_theta"]


def check_trajectories(trajectories, allow_nonfinite=False) -> list[np.ndarray]:
    """Validate one collection: a nonempty sequence of (m, 2) point arrays."""
    if isinstance(trajectories, np.ndarray) and trajectories.ndim == 2:
        trajectories = [trajectories]
    out = []
    for k, traj in enumerate(trajectories):
        arr = np.asarray(traj, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ValueError(
                f"trajectory {k} must be an (m, 2) array, got shape {arr.shape}"
            )
        if arr.shape[0] == 0:
            raise ValueError(f"trajectory {k} is empty")
        if not allow_nonfinite and not np.all(np.isfinite(arr)):
            raise ValueError(f"trajectory {k} contains non-finite points")
        out.append(arr)
    if not out:
        raise ValueError("expected at least one trajectory")
    return out


def check_collections(X) -> list[list[np.ndarray]]:
    """Validate a sequence of trajectory collections (one per sample)."""
    if not hasattr(X, "__len__") or len(X) == 0:
        raise ValueError("expected a nonempty sequence of trajectory collections")
    return [check_trajectories(collection) for collection in X]


def check_theta(y, n_samples: int) -> np.ndarray:
    """Validate regression targets into an (n_samples, d) float array."""
    arr = np.asarray(y, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[0] != n_samples:
        raise ValueError(
            f"targets must have shape ({n_samples}, d), got {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise ValueError("targets contain non-finite values")
    return arr
