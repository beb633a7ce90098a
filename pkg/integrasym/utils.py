"""Utility functions."""

from __future__ import annotations

import inspect
from dataclasses import dataclass, field
from functools import wraps
from typing import Optional, Sequence, Tuple

import bottleneck as bn
import numpy as np

from .symexpr import Point


def as_point_array(points) -> np.ndarray:
    """Coerce a Point, a list of Points or an array-like to shape ``(m, n)``."""
    if isinstance(points, Point):
        return points.as_array()[None, :]
    if isinstance(points, np.ndarray):
        return np.atleast_2d(points.astype(float, copy=False))
    points = list(points)
    if not points:
        return np.zeros((0, 0))
    if isinstance(points[0], Point):
        return np.array([p.coordinates for p in points], dtype=float)
    return np.atleast_2d(np.asarray(points, dtype=float))


def convert_to_numpy(func):
    """Convert the ``points`` argument to an ``(m, n)`` array before the call.

    Accepts a Point, a list of Points or any array-like of number rows, see
    :func:`as_point_array`.
    """
    signature = inspect.signature(func)

    @wraps(func)
    def wrapper(*args, **kwargs):
        bound = signature.bind(*args, **kwargs)
        bound.arguments["points"] = as_point_array(bound.arguments["points"])
        return func(*bound.args, **bound.kwargs)

    return wrapper


def to_points(array: np.ndarray, names: Sequence[str]) -> list:
    """Rows of ``array`` as Points."""
    return [Point(tuple(row), tuple(names)) for row in np.atleast_2d(array)]


@dataclass(frozen=True)
class ResidualReport:
    """Summary of pointwise residuals.

    Parameters
    ----------
    max : float
        largest residual (0 for an empty sample)
    mean : float
        mean residual (0 for an empty sample)
    count : int
        number of points
    tolerance : float
        threshold a check passes at
    worst_point : tuple of float, optional
        coordinates of the point with the largest residual
    details : dict
        check specific extras
    """

    max: float
    mean: float
    count: int
    tolerance: float
    worst_point: Optional[Tuple[float, ...]] = None
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max)) and self.max <= self.tolerance

    def as_dict(self) -> dict:
        return {
            "residual_max": float(self.max),
            "residual_mean": float(self.mean),
            "points": int(self.count),
            "tolerance": float(self.tolerance),
            "worst_point": None if self.worst_point is None else list(self.worst_point),
            **self.details,
        }


def summarize(
    residuals: np.ndarray, points: np.ndarray, tolerance: float, **details
) -> ResidualReport:
    """Reduce per-point residuals to a :class:`ResidualReport`.

    Non-finite residuals count as infinitely bad.
    """
    residuals = np.asarray(residuals, dtype=float).reshape(-1)
    if residuals.size == 0:
        return ResidualReport(0.0, 0.0, 0, tolerance, None, dict(details))
    residuals = np.where(np.isfinite(residuals), residuals, np.inf)
    worst = int(bn.nanargmax(residuals))
    return ResidualReport(
        max=float(bn.nanmax(residuals)),
        mean=float(bn.nanmean(residuals)),
        count=int(residuals.size),
        tolerance=float(tolerance),
        worst_point=tuple(float(c) for c in np.atleast_2d(points)[worst]),
        details=dict(details),
    )


def relative(numerator: np.ndarray, scale: np.ndarray) -> np.ndarray:
    """``|numerator| / (1 + |scale|)``, the residual normalization used everywhere."""
    return np.abs(numerator) / (1.0 + np.abs(scale))
