"""Linearizing chart of a completely integrable system.

With ``u_1 = 1/nu``, ``u_{k+1} = C_k/nu`` and ``u_n = H/nu`` and the new time
``ds = -div(X) dt`` the system becomes ``u' = u`` wherever

.. math::

    \\operatorname{div}(X) \\cdot
    \\frac{\\partial(1/\\nu, C_1, \\dots, C_{n-2}, H)}{\\partial(x_1, \\dots, x_n)}
    \\neq 0.

The set where this product vanishes (the O-set) is avoided by rejection
sampling; pointwise nondegeneracy is the testable stand-in for it having
measure zero.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Dict, List, Optional, Tuple

import numpy as np

from .constants import Numerics, Thresholds
from .errors import (
    AdmissibilityExhausted,
    DivisionByZero,
    EvaluationError,
    NoConvergence,
    SingularJacobian,
)
from .symexpr import (
    ONE,
    Expr,
    Point,
    evaluate_batch,
    simplify,
)
from .utils import ResidualReport, as_point_array, convert_to_numpy, summarize, to_points
from .vcalc import (
    ExprMatrix,
    IntegrableSystem,
    VectorField,
    det_symbolic,
    evaluate_many,
    jacobian_matrix,
    nambu_bracket,
)

logger = logging.getLogger(__name__)

DIVISION_GUARD = Numerics.division_guard.value


def normalized_det(J: np.ndarray) -> np.ndarray:
    """``|det J|`` divided by the product of the row norms (Hadamard ratio).

    The ratio lies in ``[0, 1]``; it is 0 for singular matrices and for
    matrices with a zero row, and NaN entries map to 0.
    """
    J = np.asarray(J, dtype=float)
    with np.errstate(all="ignore"):
        # rows rescaled to unit peak, the ratio is invariant under row scaling
        peak = np.max(np.abs(J), axis=-1, keepdims=True)
        J = J / np.where(peak > 0, peak, 1.0)
        scale = np.prod(np.linalg.norm(J, axis=-1), axis=-1)
        det = np.abs(np.linalg.det(np.nan_to_num(J, nan=0.0, posinf=0.0, neginf=0.0)))
        ratio = np.where(scale > 0, det / np.where(scale > 0, scale, 1.0), 0.0)
    return np.where(np.isfinite(ratio) & np.all(np.isfinite(J), axis=(-2, -1)), ratio, 0.0)


# Types ================================================================================


@dataclass(frozen=True)
class LinearizingChart:
    """The change of variables ``x -> u``.

    Parameters
    ----------
    components : tuple of Expr
        ``(1/nu, C_1/nu, ..., C_{n-2}/nu, H/nu)``
    jacobian : ExprMatrix
        symbolic ``D Phi``
    determinant : Expr
        symbolic ``det D Phi``
    source : tuple of str
        x variable names
    target : tuple of str
        u variable names
    """

    components: Tuple[Expr, ...]
    jacobian: ExprMatrix
    determinant: Expr
    source: Tuple[str, ...]
    target: Tuple[str, ...]

    @property
    def dimension(self) -> int:
        return len(self.source)

    @cached_property
    def hessians(self) -> Tuple[ExprMatrix, ...]:
        """Second derivatives, ``hessians[i][j, k] = d^2 Phi_i / dx_j dx_k``."""
        return tuple(
            jacobian_matrix(row, self.source) for row in self.jacobian.entries
        )

    def apply(self, points, strict: bool = True) -> np.ndarray:
        """``Phi`` at points, shape ``(m, n)``."""
        return evaluate_many(
            self.components, self.source, as_point_array(points), strict=strict
        )

    def jacobian_at(self, points, strict: bool = True) -> np.ndarray:
        """``D Phi`` at points, shape ``(m, n, n)``."""
        return self.jacobian.evaluate(self.source, points, strict=strict)

    def hessians_at(self, points, strict: bool = True) -> np.ndarray:
        """Second derivatives at points, shape ``(m, n, n, n)`` indexed ``[m, i, j, k]``."""
        return np.stack(
            [h.evaluate(self.source, points, strict=strict) for h in self.hessians],
            axis=1,
        )


@dataclass(frozen=True)
class SamplePlan:
    """Rejection sampling plan for admissible points.

    Parameters
    ----------
    count : int
        number of admissible points wanted
    seed : int
        generator seed
    domain : tuple of (float, float)
        sampling box
    nu, oset, det : float
        rejection thresholds
    """

    count: int
    seed: int
    domain: Tuple[Tuple[float, float], ...]
    nu: float = Thresholds.nu.value
    oset: float = Thresholds.oset.value
    det: float = Thresholds.det.value

    def __post_init__(self):
        if int(self.count) < 1:
            raise ValueError(f"sample count must be at least 1, got {self.count}")
        if min(self.nu, self.oset, self.det) <= 0:
            raise ValueError("rejection thresholds must be positive")
        object.__setattr__(self, "domain", tuple((float(a), float(b)) for a, b in self.domain))

    @classmethod
    def for_system(
        cls, sys: IntegrableSystem, count: int, seed: Optional[int] = None
    ) -> "SamplePlan":
        tol = sys.tolerances
        return cls(
            count=count,
            seed=sys.seed if seed is None else seed,
            domain=sys.domain,
            nu=tol.nu,
            oset=tol.oset,
            det=tol.det,
        )


@dataclass(frozen=True)
class SampleResult:
    """Admissible points together with the rejection statistics."""

    points: np.ndarray
    names: Tuple[str, ...]
    draws: int
    rejected: Dict[str, int] = field(default_factory=dict)

    @property
    def rejection_fraction(self) -> float:
        return sum(self.rejected.values()) / self.draws if self.draws else 0.0

    def as_points(self) -> List[Point]:
        return to_points(self.points, self.names)

    def as_dict(self) -> dict:
        return {
            "draws": int(self.draws),
            "accepted": int(self.points.shape[0]),
            "rejected": {k: int(v) for k, v in self.rejected.items()},
            "rejection_fraction": float(self.rejection_fraction),
        }


# O-set ================================================================================


@lru_cache(maxsize=64)
def _oset_parts(sys: IntegrableSystem) -> Tuple[Expr, Expr, ExprMatrix]:
    inverse_nu = simplify(Expr("div", (ONE, sys.nu)))
    functions = (inverse_nu,) + sys.casimirs + (sys.hamiltonian,)
    bracket = nambu_bracket(functions, sys.variables)
    value = simplify(Expr("mul", (sys.divergence, bracket)))
    return value, bracket, jacobian_matrix(functions, sys.variables)


def oset_scan(sys: IntegrableSystem, points) -> Tuple[np.ndarray, np.ndarray]:
    """O-set product and its scale at points (lenient evaluation).

    The scale is ``(1 + sum_i |dX_i/dx_i|) * prod ||grad F||`` over
    ``F = 1/nu, C_1, ..., H``; a point is degenerate when
    ``|value| <= oset tolerance * scale``.
    """
    points = as_point_array(points)
    value, _, gradients = _oset_parts(sys)
    values = evaluate_batch(value, sys.variables, points, strict=False)
    diagonal = np.abs(
        np.einsum("mii->mi", sys.field_jacobian.evaluate(sys.variables, points, strict=False))
    )
    G = gradients.evaluate(sys.variables, points, strict=False)
    scale = (1.0 + np.sum(diagonal, axis=-1)) * np.prod(np.linalg.norm(G, axis=-1), axis=-1)
    return values, scale


def oset_value(sys: IntegrableSystem, point: Point) -> float:
    """``div(X) * d(1/nu, C_1, ..., C_{n-2}, H)/d(x_1, ..., x_n)`` at a point.

    Raises
    ------
    DivisionByZero
        if nu vanishes at the point
    """
    if abs(evaluate_batch(sys.nu, sys.variables, as_point_array(point), strict=False)[0]) <= DIVISION_GUARD:
        raise DivisionByZero(f"nu vanishes at {point.coordinates}")
    value, _, _ = _oset_parts(sys)
    return float(evaluate_batch(value, sys.variables, as_point_array(point))[0])


def is_degenerate(sys: IntegrableSystem, point: Point) -> bool:
    """True when the point lies in the O-set (up to the oset tolerance)."""
    values, scale = oset_scan(sys, point)
    return bool(np.abs(values[0]) <= sys.tolerances.oset * scale[0])


# Sampling =============================================================================


def _classify(sys, chart, plan, X) -> Tuple[np.ndarray, Dict[str, int]]:
    names = sys.variables
    counts = {"nonfinite": 0, "nu": 0, "oset": 0, "det": 0}
    finite = np.all(np.isfinite(sys.field.evaluate(X, strict=False)), axis=-1)
    finite &= np.all(
        np.isfinite(evaluate_many(sys.integrals, names, X, strict=False)), axis=-1
    )
    counts["nonfinite"] = int(np.sum(~finite))
    nu = evaluate_batch(sys.nu, names, X, strict=False)
    good_nu = finite & np.isfinite(nu) & (np.abs(nu) > plan.nu)
    counts["nu"] = int(np.sum(finite & ~good_nu))
    values, scale = oset_scan(sys, X)
    good_oset = good_nu & np.isfinite(values) & (np.abs(values) > plan.oset * scale)
    counts["oset"] = int(np.sum(good_nu & ~good_oset))
    ratio = normalized_det(chart.jacobian_at(X, strict=False))
    good = good_oset & (ratio > plan.det)
    counts["det"] = int(np.sum(good_oset & ~good))
    return good, counts


def draw_admissible(
    sys: IntegrableSystem, plan: SamplePlan, chart: Optional[LinearizingChart] = None
) -> SampleResult:
    """Seeded rejection sampling of admissible points.

    Points are drawn uniformly from the plan's box and rejected when
    ``|nu| <= delta_nu``, when they lie in the O-set or when the chart
    Jacobian is nearly singular.

    Raises
    ------
    AdmissibilityExhausted
        when fewer than ``plan.count`` points survive ``100 * count`` draws
        (rejection rate above 99%)
    """
    chart = chart or build_chart(sys)
    rng = np.random.default_rng(plan.seed)
    bounds = np.array(plan.domain, dtype=float)
    budget = int(Numerics.draw_factor.value) * plan.count
    accepted: List[np.ndarray] = []
    n_accepted = 0
    draws = 0
    rejected = {"nonfinite": 0, "nu": 0, "oset": 0, "det": 0}
    while n_accepted < plan.count and draws < budget:
        batch = min(max(plan.count, 64), budget - draws)
        X = bounds[:, 0] + (bounds[:, 1] - bounds[:, 0]) * rng.random((batch, len(bounds)))
        draws += batch
        good, counts = _classify(sys, chart, plan, X)
        for reason, count in counts.items():
            rejected[reason] += count
        accepted.append(X[good])
        n_accepted += int(np.sum(good))
    points = np.concatenate(accepted, axis=0) if accepted else np.zeros((0, len(bounds)))
    result = SampleResult(points[: plan.count], sys.variables, draws, rejected)
    logger.info(
        "admissible sampling: %d/%d accepted after %d draws, rejected %s",
        min(n_accepted, plan.count),
        plan.count,
        draws,
        rejected,
    )
    if n_accepted < plan.count:
        raise AdmissibilityExhausted(
            f"only {n_accepted} of {plan.count} admissible points in {draws} draws "
            f"(rejection fraction {result.rejection_fraction:.4f})",
            stats=result,
        )
    return result


def sample_admissible(sys: IntegrableSystem, plan: SamplePlan) -> List[Point]:
    """Exactly ``plan.count`` seeded admissible points, see :func:`draw_admissible`."""
    return draw_admissible(sys, plan).as_points()


# Chart ================================================================================


def build_chart(sys: IntegrableSystem) -> LinearizingChart:
    """Build ``Phi = (1/nu, C_1/nu, ..., C_{n-2}/nu, H/nu)`` with ``D Phi`` and ``det D Phi``."""
    return _build_chart(sys.casimirs, sys.hamiltonian, sys.nu, sys.variables)


@lru_cache(maxsize=64)
def _build_chart(casimirs, hamiltonian, nu, variables) -> LinearizingChart:
    components = (simplify(Expr("div", (ONE, nu))),) + tuple(
        simplify(Expr("div", (F, nu))) for F in casimirs + (hamiltonian,)
    )
    jacobian = jacobian_matrix(components, variables)
    target = tuple(f"u{i + 1}" for i in range(len(variables)))
    logger.debug("chart components %s", [str(c) for c in components])
    return LinearizingChart(
        components=components,
        jacobian=jacobian,
        determinant=det_symbolic(jacobian),
        source=tuple(variables),
        target=target,
    )


def chart_apply(chart: LinearizingChart, x: Point) -> Point:
    """``u = Phi(x)``.

    Raises
    ------
    DivisionByZero
        if nu vanishes at ``x``
    """
    u = chart.apply(x, strict=True)[0]
    return Point(tuple(u), chart.target)


def chart_invert(
    chart: LinearizingChart,
    u: Point,
    x0: Point,
    det_threshold: float = Thresholds.det.value,
) -> Point:
    """Solve ``Phi(x) = u`` by Newton iteration from ``x0``.

    Uses the symbolic ``D Phi`` and halves the step (at most 20 times) until
    the residual decreases. Converged when
    ``||Phi(x) - u||_inf <= 1e-12 (1 + ||u||_inf)``.

    Parameters
    ----------
    chart : LinearizingChart
        chart to invert
    u : Point
        target in u-coordinates
    x0 : Point
        starting guess
    det_threshold : float, optional
        Hadamard-normalized determinant below which an iterate is singular

    Returns
    -------
    Point
        x with ``Phi(x) = u``

    Raises
    ------
    SingularJacobian
        if ``D Phi`` is singular at an iterate
    NoConvergence
        if 50 iterations or a line search fail
    """
    target = np.asarray(u.coordinates if isinstance(u, Point) else u, dtype=float)
    x = np.asarray(x0.coordinates if isinstance(x0, Point) else x0, dtype=float)
    tol = Numerics.newton_tol.value * (1.0 + np.max(np.abs(target)))

    def residual(point):
        return chart.apply(point[None, :], strict=True)[0] - target

    try:
        F = residual(x)
    except EvaluationError as err:
        raise NoConvergence(f"chart undefined at the starting point: {err}") from err
    for iteration in range(int(Numerics.newton_iterations.value)):
        norm = np.max(np.abs(F))
        if norm <= tol:
            logger.debug("chart inversion converged in %d iterations", iteration)
            return Point(tuple(x), chart.source)
        J = chart.jacobian_at(x[None, :], strict=False)[0]
        if normalized_det(J) <= det_threshold:
            raise SingularJacobian(f"singular chart Jacobian at {tuple(x)}")
        step = np.linalg.solve(J, F)
        scale = 1.0
        for _ in range(int(Numerics.newton_halvings.value) + 1):
            trial = x - scale * step
            try:
                trial_F = residual(trial)
            except EvaluationError:
                trial_F = None
            if trial_F is not None and np.max(np.abs(trial_F)) < norm:
                break
            scale /= 2.0
        else:
            raise NoConvergence(f"line search failed at iteration {iteration}, x = {tuple(x)}")
        x, F = trial, trial_F
    if np.max(np.abs(F)) <= tol:
        return Point(tuple(x), chart.source)
    raise NoConvergence(
        f"no convergence in {int(Numerics.newton_iterations.value)} iterations"
    )


@convert_to_numpy
def pushforward(chart: LinearizingChart, X: VectorField, points) -> np.ndarray:
    """``D Phi(x) X(x)`` at points, shape ``(m, n)``."""
    J = chart.jacobian_at(points, strict=False)
    return np.einsum("mij,mj->mi", J, X.evaluate(points, strict=False))


@convert_to_numpy
def linearization_check(
    sys: IntegrableSystem, chart: LinearizingChart, points
) -> ResidualReport:
    """Check the linearized form ``D Phi X + div(X) Phi = 0`` at points.

    This is ``du/ds = u`` for ``ds = -div(X) dt`` written without the new
    time; the residual is
    ``||D Phi X + div X Phi||_inf / (1 + ||div X Phi||_inf)``.
    """
    if points.size == 0:
        return summarize([], points, sys.tolerances.linearization)
    pushed = pushforward(chart, sys.field, points)
    div = evaluate_batch(sys.divergence, sys.variables, points, strict=False)
    scaled = div[:, None] * chart.apply(points, strict=False)
    residuals = np.max(np.abs(pushed + scaled), axis=-1) / (
        1.0 + np.max(np.abs(scaled), axis=-1)
    )
    return summarize(
        residuals,
        points,
        sys.tolerances.linearization,
        chart=[str(c) for c in chart.components],
    )


def new_time_factor(sys: IntegrableSystem, x: Point) -> float:
    """``ds/dt = -div(X)(x)``."""
    return -float(evaluate_batch(sys.divergence, sys.variables, as_point_array(x))[0])


def chart_determinant_scan(chart: LinearizingChart, points) -> Tuple[np.ndarray, np.ndarray]:
    """Symbolic ``det D Phi`` and numeric determinant of ``D Phi`` at points."""
    points = as_point_array(points)
    symbolic = evaluate_batch(chart.determinant, chart.source, points, strict=False)
    numeric = np.linalg.det(chart.jacobian_at(points, strict=False))
    return symbolic, numeric
