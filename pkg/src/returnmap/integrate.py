"""Adaptive explicit Runge-Kutta integration with section-crossing detection.

The stepper is the Dormand-Prince 5(4) embedded pair. The 5th-order solution
is propagated; the embedded 4th-order solution supplies the per-step error
estimate driving a PI step-size controller (safety 0.9, growth clamped to
[0.2, 5.0]). Directional section crossings are located by bisection on a
cubic Hermite interpolant of the accepted step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .dynamics import SingularityError

__all__ = [
    "IntegratorConfig",
    "SectionSpec",
    "CrossingRecord",
    "IntegrationStats",
    "EventResult",
    "StepBudgetExceeded",
    "rk_step",
    "integrate_adaptive",
    "integrate_with_events",
]


class StepBudgetExceeded(RuntimeError):
    """The step budget ran out before reaching the requested end time."""


@dataclass(frozen=True)
class IntegratorConfig:
    rtol: float = 1e-10
    atol: float = 1e-10
    h_init: float = 1e-3
    h_max: float = 0.5
    max_steps: int = 10_000_000
    event_time_tol: float = 1e-10

    def __post_init__(self):
        if min(self.rtol, self.atol, self.h_init, self.h_max, self.event_time_tol) <= 0:
            raise ValueError("tolerances and step bounds must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass(frozen=True)
class SectionSpec:
    """An oriented hypersurface given by the zero set of ``event``.

    ``direction`` is the sign the event function's time derivative must have
    at a counted crossing (+1: rising through zero). ``record`` maps the full
    state at a crossing to the two return-map coordinates. ``accept``, when
    given, can veto a located crossing based on the full state; it is used to
    select one sheet of a periodic event function.
    """

    event: Callable[[np.ndarray], float]
    direction: int = +1
    record: Callable[[np.ndarray], tuple] = lambda y: (y[0], y[1])
    accept: Optional[Callable[[np.ndarray], bool]] = None


@dataclass(frozen=True)
class CrossingRecord:
    time: float
    point: tuple
    full_state: np.ndarray


@dataclass
class IntegrationStats:
    n_accepted: int = 0
    n_rejected: int = 0
    n_field_evals: int = 0


@dataclass
class EventResult:
    crossings: list = field(default_factory=list)
    truncated: bool = False
    reason: str = ""
    t_final: float = 0.0
    stats: IntegrationStats = field(default_factory=IntegrationStats)


# Dormand-Prince 5(4) tableau.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = (
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
)
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# b5 - b4: dotting the stage slopes with this yields the embedded error.
_E = np.array(
    [71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40]
)

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0
# PI controller exponents for a 5th-order pair.
_ALPHA = 0.7 / 5.0
_BETA = 0.4 / 5.0


def _stages(field_fn, t, y, h, f0):
    """Evaluate the seven stage slopes; the last doubles as f(t+h, y_new)."""
    k = [f0]
    for i, row in enumerate(_A):
        yi = y + h * sum(row[j] * k[j] for j in range(len(row)))
        k.append(field_fn(t + _C[i + 1] * h, yi))
    y_new = y + h * (
        _B5[0] * k[0] + _B5[2] * k[2] + _B5[3] * k[3] + _B5[4] * k[4] + _B5[5] * k[5]
    )
    err = h * (
        _E[0] * k[0]
        + _E[2] * k[2]
        + _E[3] * k[3]
        + _E[4] * k[4]
        + _E[5] * k[5]
        + _E[6] * k[6]
    )
    return y_new, err, k[6]


def rk_step(field_fn, state, t: float, h: float):
    """One Dormand-Prince 5(4) step.

    Returns the 5th-order solution at ``t + h`` together with the embedded
    error estimate (5th minus 4th order result, componentwise).
    """
    if h <= 0:
        raise ValueError("h must be positive")
    y = np.asarray(state, dtype=float)
    f0 = np.asarray(field_fn(t, y), dtype=float)
    if not np.all(np.isfinite(f0)):
        raise FloatingPointError(f"non-finite derivative at t={t}")
    y_new, err, k_last = _stages(field_fn, t, y, h, f0)
    if not np.all(np.isfinite(y_new)):
        raise FloatingPointError(f"non-finite state produced at t={t}")
    return y_new, err


def _error_norm(err, y0, y1, rtol, atol) -> float:
    scale = atol + rtol * np.maximum(np.abs(y0), np.abs(y1))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def _hermite(t0, y0, f0, t1, y1, f1, t):
    """Cubic Hermite interpolant over one accepted step."""
    h = t1 - t0
    s = (t - t0) / h
    h00 = (1.0 + 2.0 * s) * (1.0 - s) ** 2
    h10 = s * (1.0 - s) ** 2
    h01 = s * s * (3.0 - 2.0 * s)
    h11 = s * s * (s - 1.0)
    return h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1


class _AdaptiveStepper:
    """Shared accept/reject loop used by plain and event-detecting drivers."""

    def __init__(self, field_fn, y0, t0, cfg: IntegratorConfig):
        self.field = field_fn
        self.cfg = cfg
        self.t = float(t0)
        self.y = np.asarray(y0, dtype=float)
        self.f = np.asarray(field_fn(self.t, self.y), dtype=float)
        self.h = min(cfg.h_init, cfg.h_max)
        self.err_prev = 1.0
        self.stats = IntegrationStats(n_field_evals=1)

    def advance(self, t_limit: float):
        """Take one accepted step, not overshooting ``t_limit``.

        Returns ``(t_new, y_new, f_new)`` with ``f_new = f(t_new, y_new)``
        reused from the FSAL stage. Updates internal state on acceptance.
        """
        cfg = self.cfg
        while True:
            if self.stats.n_accepted + self.stats.n_rejected >= cfg.max_steps:
                raise StepBudgetExceeded(
                    f"exceeded {cfg.max_steps} steps at t={self.t:.6g}"
                )
            h = min(self.h, cfg.h_max, t_limit - self.t)
            if h <= 0:
                raise ValueError("step underflow: no room left before t_limit")
            y_new, err, f_new = _stages(self.field, self.t, self.y, h, self.f)
            self.stats.n_field_evals += 6
            if not np.all(np.isfinite(y_new)):
                raise FloatingPointError(f"non-finite state at t={self.t:.6g}")
            norm = _error_norm(err, self.y, y_new, cfg.rtol, cfg.atol)
            if norm <= 1.0:
                self.stats.n_accepted += 1
                factor = _SAFETY * (norm or 1e-16) ** -_ALPHA * self.err_prev**_BETA
                self.h = h * min(_MAX_FACTOR, max(_MIN_FACTOR, factor))
                self.err_prev = norm or 1e-16
                t_prev, y_prev, f_prev = self.t, self.y, self.f
                self.t, self.y, self.f = self.t + h, y_new, f_new
                return t_prev, y_prev, f_prev, self.t, self.y, self.f
            self.stats.n_rejected += 1
            factor = _SAFETY * norm**-_ALPHA
            self.h = h * min(1.0, max(_MIN_FACTOR, factor))


def integrate_adaptive(field_fn, state, t0: float, t1: float, cfg: IntegratorConfig):
    """Integrate ``dy/dt = field(t, y)`` from ``t0`` to ``t1``.

    Returns ``(final_state, stats)``. Raises :class:`StepBudgetExceeded` when
    the budget runs out; singularities raised by the field propagate.
    """
    if t1 <= t0:
        raise ValueError("t1 must exceed t0")
    stepper = _AdaptiveStepper(field_fn, state, t0, cfg)
    while stepper.t < t1:
        stepper.advance(t1)
    return stepper.y, stepper.stats


def _locate_crossing(section, sgn, t0, y0, f0, t1, y1, f1, time_tol):
    """Bisect the Hermite interpolant for the sign change bracketed in a step.

    Works on the direction-adjusted event value ``sgn * e`` so the bracket is
    always [negative, non-negative]; returns the non-negative end.
    """
    lo, hi = t0, t1
    while hi - lo > time_tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        e_mid = sgn * section.event(_hermite(t0, y0, f0, t1, y1, f1, mid))
        if e_mid < 0.0:
            lo = mid
        else:
            hi = mid
    t_cross = hi
    y_cross = _hermite(t0, y0, f0, t1, y1, f1, t_cross)
    return t_cross, y_cross


def integrate_with_events(
    field_fn, section: SectionSpec, state, t_end: float, cfg: IntegratorConfig
) -> EventResult:
    """Record every directional crossing of ``section`` in ``(0, t_end]``.

    A crossing is counted when the event function changes sign across an
    accepted step in the direction asked for; a step landing exactly on zero
    counts, a tangential touch does not. Crossings are localized on the dense
    output to within ``cfg.event_time_tol``. If the field signals a
    singularity or the step budget runs out, the crossings found so far are
    returned with ``truncated`` set.
    """
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    result = EventResult()
    sgn = 1.0 if section.direction >= 0 else -1.0
    stepper = None
    try:
        stepper = _AdaptiveStepper(field_fn, state, 0.0, cfg)
        e_prev = sgn * section.event(stepper.y)
        while stepper.t < t_end:
            t0, y0, f0, t1, y1, f1 = stepper.advance(t_end)
            e_new = sgn * section.event(y1)
            if e_prev < 0.0 <= e_new:
                t_cross, y_cross = _locate_crossing(
                    section, sgn, t0, y0, f0, t1, y1, f1, cfg.event_time_tol
                )
                if section.accept is None or section.accept(y_cross):
                    result.crossings.append(
                        CrossingRecord(t_cross, section.record(y_cross), y_cross)
                    )
            e_prev = e_new
        result.t_final = stepper.t
        result.stats = stepper.stats
    except SingularityError as exc:
        result.truncated = True
        result.reason = f"singularity: {exc}"
    except StepBudgetExceeded as exc:
        result.truncated = True
        result.reason = f"step budget: {exc}"
    if result.truncated and stepper is not None:
        result.t_final = stepper.t
        result.stats = stepper.stats
    return result
