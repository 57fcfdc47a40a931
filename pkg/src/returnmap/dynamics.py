"""Concrete dynamical systems: the Hénon map and the swinging Atwood's machine.

Both systems are exposed as pure state-evolution functions. States are plain
numpy arrays: ``(x, y)`` for the Hénon map, ``(r, phi, p_r, p_phi)`` for the
swinging Atwood's machine (SAM). The SAM uses canonical coordinates because
its return-map axes are the radial coordinate and its conjugate momentum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "HenonParams",
    "SamParams",
    "SingularityError",
    "henon_step",
    "henon_trajectory",
    "henon_trajectories",
    "henon_initial_grid",
    "sam_vector_field",
    "sam_field",
    "sam_energy",
    "sam_section",
    "sample_section_state",
    "sam_section_bounds",
    "wrap_angle",
]

# Generated datasets stay inside these boxes; the step functions themselves
# accept anything.
HENON_A_RANGE = (0.05, 0.45)
HENON_B_RANGE = (-1.1, 1.1)
SAM_MU_RANGE = (1.5, 15.0)

DEFAULT_ESCAPE_RADIUS = 1e6
DEFAULT_R_MIN = 1e-3


class SingularityError(RuntimeError):
    """Raised when the swinging bob reaches the pulley (r below the guard)."""


@dataclass(frozen=True)
class HenonParams:
    """Quadratic-map coefficients ``x' = 1 - a x^2 + y``, ``y' = b x``."""

    a: float
    b: float


@dataclass(frozen=True)
class SamParams:
    """Mass ratio of the non-swinging to the swinging bob.

    Gravitational acceleration and total mechanical energy are fixed at 1,
    so the mass ratio is the system's only free parameter. Bounded motion
    requires ``mu > 1``.
    """

    mu: float


# ---------------------------------------------------------------------------
# Hénon map


def henon_step(state, params: HenonParams) -> np.ndarray:
    """Apply one iteration of the Hénon map to a single ``(x, y)`` state."""
    x, y = float(state[0]), float(state[1])
    return np.array([1.0 - params.a * (x * x) + y, params.b * x])


def henon_trajectory(
    init,
    params: HenonParams,
    steps: int,
    escape_radius: float = DEFAULT_ESCAPE_RADIUS,
) -> np.ndarray:
    """Iterate the map from ``init``, truncating divergent orbits.

    Returns an ``(m, 2)`` array holding ``init`` followed by up to ``steps``
    iterates. Iteration stops before the first iterate that is non-finite or
    leaves the box ``|x|, |y| <= escape_radius``, so every returned point is
    finite.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if escape_radius <= 0:
        raise ValueError("escape_radius must be positive")
    a, b = params.a, params.b
    out = np.empty((steps + 1, 2))
    x, y = float(init[0]), float(init[1])
    out[0] = (x, y)
    n = 1
    for _ in range(steps):
        x, y = 1.0 - a * (x * x) + y, b * x
        if not (math.isfinite(x) and math.isfinite(y)):
            break
        if abs(x) > escape_radius or abs(y) > escape_radius:
            break
        out[n] = (x, y)
        n += 1
    return out[:n]


def henon_trajectories(
    inits: np.ndarray,
    params: HenonParams,
    steps: int,
    escape_radius: float = DEFAULT_ESCAPE_RADIUS,
) -> list[np.ndarray]:
    """Vectorized :func:`henon_trajectory` over an ``(n, 2)`` array of starts.

    Arithmetic matches the scalar path operation for operation, so each
    returned trajectory is bitwise identical to iterating its start alone.
    """
    inits = np.asarray(inits, dtype=float)
    n = inits.shape[0]
    a, b = params.a, params.b
    buf = np.empty((steps + 1, n, 2))
    buf[0] = inits
    lengths = np.ones(n, dtype=np.int64)
    x = inits[:, 0].copy()
    y = inits[:, 1].copy()
    alive = np.ones(n, dtype=bool)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, steps + 1):
            if not alive.any():
                break
            xn = 1.0 - a * (x * x) + y
            yn = b * x
            ok = (
                np.isfinite(xn)
                & np.isfinite(yn)
                & (np.abs(xn) <= escape_radius)
                & (np.abs(yn) <= escape_radius)
            )
            alive = alive & ok
            buf[k, alive, 0] = xn[alive]
            buf[k, alive, 1] = yn[alive]
            lengths[alive] = k + 1
            x, y = xn, yn
    return [buf[: lengths[i], i].copy() for i in range(n)]


def henon_initial_grid(per_axis: int = 15, lo: float = -4.0, hi: float = 4.0) -> np.ndarray:
    """Uniform ``per_axis x per_axis`` grid of initial states over a square."""
    axis = np.linspace(lo, hi, per_axis)
    gx, gy = np.meshgrid(axis, axis, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel()])


# ---------------------------------------------------------------------------
# Swinging Atwood's machine
#
# Hamiltonian (m = g = 1):  H = p_r^2 / (2 (1+mu)) + p_phi^2 / (2 r^2)
#                               + r (mu - cos phi)
# State layout: (r, phi, p_r, p_phi).


def sam_energy(state, params: SamParams) -> float:
    """Total mechanical energy of a SAM state."""
    r, phi, p_r, p_phi = (float(v) for v in state)
    return (
        p_r * p_r / (2.0 * (1.0 + params.mu))
        + p_phi * p_phi / (2.0 * r * r)
        + r * (params.mu - math.cos(phi))
    )


def sam_vector_field(
    state, params: SamParams, r_min: float = DEFAULT_R_MIN
) -> np.ndarray:
    """Hamilton's equations for the SAM.

    Returns ``(dr, dphi, dp_r, dp_phi)``. Raises :class:`SingularityError`
    once the bob is within ``r_min`` of the pulley; callers terminate the
    trajectory there.
    """
    r, phi, p_r, p_phi = (float(v) for v in state)
    if r <= r_min:
        raise SingularityError(f"r={r!r} at or below the pulley guard {r_min!r}")
    mu = params.mu
    r2 = r * r
    return np.array(
        [
            p_r / (1.0 + mu),
            p_phi / r2,
            p_phi * p_phi / (r2 * r) - (mu - math.cos(phi)),
            -r * math.sin(phi),
        ]
    )


def sam_field(params: SamParams, r_min: float = DEFAULT_R_MIN):
    """Right-hand side ``f(t, y)`` for the integrator, with singularity guard."""
    mu = params.mu
    one_plus_mu = 1.0 + mu

    def field(t: float, y: np.ndarray) -> np.ndarray:
        r = y[0]
        if r <= r_min:
            raise SingularityError(f"r={r!r} at or below the pulley guard {r_min!r}")
        phi = y[1]
        p_phi = y[3]
        r2 = r * r
        return np.array(
            [
                y[2] / one_plus_mu,
                p_phi / r2,
                p_phi * p_phi / (r2 * r) - (mu - math.cos(phi)),
                -r * math.sin(phi),
            ]
        )

    return field


def sam_section_bounds(params: SamParams) -> tuple[float, float]:
    """Box bounding the energetically allowed section region.

    At unit energy with ``phi = 0`` every section point satisfies
    ``r <= 1/(mu-1)`` and ``|p_r| <= sqrt(2 (1+mu))``.
    """
    r_max = 1.0 / (params.mu - 1.0)
    p_max = math.sqrt(2.0 * (1.0 + params.mu))
    return r_max, p_max


def sample_section_state(params: SamParams, rng: np.random.Generator) -> np.ndarray:
    """Draw a unit-energy state on the section ``phi = 0`` with ``p_phi > 0``.

    ``(r, p_r)`` is uniform over the allowed region, obtained by rejection
    sampling in its bounding box; ``p_phi`` is then solved from the energy
    constraint, which makes the total energy exact to rounding.
    """
    if params.mu <= 1.0:
        raise ValueError("mass ratio must exceed 1 for bounded motion")
    r_max, p_max = sam_section_bounds(params)
    two_m = 2.0 * (1.0 + params.mu)
    while True:
        r = rng.uniform(0.0, r_max)
        p_r = rng.uniform(-p_max, p_max)
        # residual = fraction of the energy left for the angular term
        residual = 1.0 - p_r * p_r / two_m - r * (params.mu - 1.0)
        if r > 0.0 and residual > 0.0:
            p_phi = r * math.sqrt(2.0 * residual)
            return np.array([r, 0.0, p_r, p_phi])


def wrap_angle(phi: float) -> float:
    """Reduce an unwrapped angle into ``(-pi, pi]``."""
    w = math.fmod(phi, 2.0 * math.pi)
    if w > math.pi:
        w -= 2.0 * math.pi
    elif w <= -math.pi:
        w += 2.0 * math.pi
    return w


def sam_section(params: SamParams, r_min: float = DEFAULT_R_MIN):
    """Poincaré section ``phi = 0 (mod 2pi)`` crossed with ``dphi/dt > 0``.

    The event function is ``sin(phi)`` so circulating orbits (unwrapped phi)
    trigger on every revolution; the acceptance predicate keeps only the
    ``cos(phi) > 0`` sheet, i.e. the bob passing under the pulley, not over.
    Recorded coordinates are ``(r, p_r)``.
    """
    from .integrate import SectionSpec  # local import to avoid a cycle

    return SectionSpec(
        event=lambda y: math.sin(y[1]),
        direction=+1,
        record=lambda y: (y[0], y[2]),
        accept=lambda y: math.cos(y[1]) > 0.0,
    )
