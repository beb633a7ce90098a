"""Explicit Runge-Kutta integrators for autonomous fields.

States are batched, shape ``(m, n)``, so a whole cloud of initial points
moves with one field evaluation per stage. Time may be negative.
"""

from __future__ import annotations

import logging
from typing import Callable, Optional

import numpy as np

from .errors import DomainExit, StepFailure

logger = logging.getLogger(__name__)

Field = Callable[[np.ndarray], np.ndarray]

METHODS = ("rk4", "rk45")

MAX_STEPS = 100_000

# Runge-Kutta-Fehlberg 4(5): stage weights, 5th order weights (the propagated
# solution) and the difference between the 5th and 4th order weights.
_RKF_A = (
    (),
    (1 / 4,),
    (3 / 32, 9 / 32),
    (1932 / 2197, -7200 / 2197, 7296 / 2197),
    (439 / 216, -8.0, 3680 / 513, -845 / 4104),
    (-8 / 27, 2.0, -3544 / 2565, 1859 / 4104, -11 / 40),
)
_RKF_B = (16 / 135, 0.0, 6656 / 12825, 28561 / 56430, -9 / 50, 2 / 55)
_RKF_E = (1 / 360, 0.0, -128 / 4275, -2197 / 75240, 1 / 50, 2 / 55)


def _check_box(y: np.ndarray, bounds: Optional[np.ndarray], t: float):
    if bounds is None:
        return
    inside = np.all((y >= bounds[:, 0]) & (y <= bounds[:, 1]), axis=-1)
    if not np.all(inside):
        first = int(np.argmin(inside))
        raise DomainExit(
            f"trajectory left the domain box at t = {t:.6g}, state {tuple(y[first])}"
        )


def _derivative(f: Field, y: np.ndarray) -> np.ndarray:
    dy = np.asarray(f(y), dtype=float)
    if dy.shape != y.shape:
        raise ValueError(f"field returned shape {dy.shape} for states of shape {y.shape}")
    return dy


def rk4_step(f: Field, y: np.ndarray, h: float) -> np.ndarray:
    """One classical fourth order step."""
    k1 = _derivative(f, y)
    k2 = _derivative(f, y + 0.5 * h * k1)
    k3 = _derivative(f, y + 0.5 * h * k2)
    k4 = _derivative(f, y + h * k3)
    return y + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0


def rkf45_step(f: Field, y: np.ndarray, h: float):
    """One Runge-Kutta-Fehlberg step.

    Returns
    -------
    y1 : np.ndarray
        fifth order solution
    err : np.ndarray
        componentwise local error estimate
    """
    k = []
    for a in _RKF_A:
        stage = y + h * sum(coef * kj for coef, kj in zip(a, k)) if a else y
        k.append(_derivative(f, stage))
    y1 = y + h * sum(b * kj for b, kj in zip(_RKF_B, k))
    err = np.abs(h * sum(e * kj for e, kj in zip(_RKF_E, k)))
    return y1, err


def integrate_rk4(
    f: Field, y0: np.ndarray, t: float, step: float, bounds: Optional[np.ndarray] = None
) -> np.ndarray:
    """Fixed-step RK4 from time 0 to ``t``.

    The step is shortened so an integer number of steps lands on ``t``.
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    y = np.array(y0, dtype=float, ndmin=2)
    if t == 0:
        return y
    count = max(1, int(np.ceil(abs(t) / step - 1e-12)))
    if count > MAX_STEPS:
        raise StepFailure(f"{count} fixed steps exceed the limit of {MAX_STEPS}")
    h = t / count
    for i in range(count):
        y = rk4_step(f, y, h)
        if not np.all(np.isfinite(y)):
            raise StepFailure(f"non-finite state after step {i + 1} of {count}")
        _check_box(y, bounds, (i + 1) * h)
    return y


def integrate_rk45(
    f: Field,
    y0: np.ndarray,
    t: float,
    tol: float,
    step: Optional[float] = None,
    bounds: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Adaptive RKF45 from time 0 to ``t``.

    A step is accepted when ``err <= tol * (1 + |y|)`` holds for every
    component of every state in the batch.

    Raises
    ------
    StepFailure
        if the step size underflows or the step limit is reached
    DomainExit
        if a state leaves ``bounds``
    """
    if tol <= 0:
        raise ValueError(f"tolerance must be positive, got {tol}")
    y = np.array(y0, dtype=float, ndmin=2)
    if t == 0:
        return y
    direction = np.sign(t)
    span = abs(t)
    h = min(step or span / 100.0, span)
    elapsed = 0.0
    accepted = rejected = 0
    while elapsed < span:
        if accepted + rejected >= MAX_STEPS:
            raise StepFailure(f"step limit {MAX_STEPS} reached at t = {direction * elapsed:.6g}")
        remaining = span - elapsed
        h = min(h, remaining)
        if h <= 1e-14 * max(1.0, span) and h < remaining:
            raise StepFailure(f"step size underflow at t = {direction * elapsed:.6g}")
        with np.errstate(all="ignore"):
            y1, err = rkf45_step(f, y, direction * h)
            ratio = np.max(err / (tol * (1.0 + np.abs(y1))))
        if not np.isfinite(ratio) or not np.all(np.isfinite(y1)):
            rejected += 1
            h *= 0.25
            continue
        if ratio <= 1.0:
            y = y1
            elapsed += h
            accepted += 1
            _check_box(y, bounds, direction * elapsed)
        else:
            rejected += 1
        factor = 5.0 if ratio == 0 else 0.9 * ratio ** -0.2
        h *= min(5.0, max(0.2, factor))
    logger.debug("rk45 reached t = %g with %d accepted, %d rejected steps", t, accepted, rejected)
    return y


def integrate(
    f: Field,
    y0: np.ndarray,
    t: float,
    method: str = "rk45",
    step: float = 1e-2,
    tol: float = 1e-10,
    bounds: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Integrate ``y' = f(y)`` from 0 to ``t`` with the named method."""
    if method == "rk4":
        return integrate_rk4(f, y0, t, step, bounds)
    if method == "rk45":
        return integrate_rk45(f, y0, t, tol, step, bounds)
    raise ValueError(f"unknown integrator {method!r}, expected one of {METHODS}")
