"""Lie symmetries from the kernel of the Euler field.

In the chart ``u = Phi(x)`` the system is a time change of the Euler field
``X~ = u_1 d/du_1 + ... + u_n d/du_n``. Every ``Y~`` with ``[X~, Y~] = 0``
pulls back to a symmetry ``Y = Phi^* Y~`` of ``X`` with ``[X, Y] = mu X``
and ``mu(x) = -Y(div X)(x) / div X(x)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .constants import Numerics, Residuals, Thresholds
from .errors import (
    DegeneratePoint,
    DimensionMismatch,
    DomainExit,
    SingularJacobian,
)
from .integrators import METHODS, integrate
from .linearize import (
    LinearizingChart,
    SamplePlan,
    chart_invert,
    draw_admissible,
    normalized_det,
)
from .symexpr import (
    ONE,
    Expr,
    Point,
    const,
    evaluate_batch,
    simplify,
    substitute,
    var,
)
from .utils import ResidualReport, as_point_array, summarize
from .vcalc import (
    ExprMatrix,
    IntegrableSystem,
    VectorField,
    _sum,
    det_symbolic,
    evaluate_many,
    jacobian_matrix,
    lie_bracket,
)

logger = logging.getLogger(__name__)

# Symbolic pullbacks are attempted up to this dimension.
SYMBOLIC_LIMIT = 4

KERNEL_BOX = (0.5, 2.0)


def euler_field(n: int, variables: Optional[Sequence[str]] = None) -> VectorField:
    """Euler field ``(u_1, ..., u_n)`` over ``u1, ..., un`` (or the given names)."""
    names = tuple(variables) if variables is not None else tuple(f"u{i + 1}" for i in range(n))
    if len(names) != n:
        raise DimensionMismatch(f"{len(names)} variable names for dimension {n}")
    return VectorField(tuple(var(name) for name in names), names)


# Kernel elements ======================================================================


@dataclass(frozen=True)
class KernelElement:
    """A field ``Y~`` in u-coordinates commuting with the Euler field.

    Parameters
    ----------
    field : VectorField
        ``Y~`` over the u variables
    residual : float
        max of ``||[X~, Y~]||_inf`` over the verification sample
    exact : bool
        True when the bracket simplified to the zero field
    matrix : tuple of tuple of float, optional
        ``A`` for the linear family ``Y~ = A u``
    label : str
        name used in reports
    tolerance : float
        residual at or below which the element counts as verified
    """

    field: VectorField
    residual: float
    exact: bool = False
    matrix: Optional[Tuple[Tuple[float, ...], ...]] = None
    label: str = "kernel"
    tolerance: float = Residuals.kernel.value

    @property
    def dimension(self) -> int:
        return self.field.dimension

    @property
    def verified(self) -> bool:
        return self.exact or self.residual <= self.tolerance

    def evaluate(self, u: np.ndarray) -> np.ndarray:
        u = np.atleast_2d(u)
        if self.matrix is not None:
            return u @ np.array(self.matrix).T
        return self.field.evaluate(u, strict=False)

    def jacobian(self, u: np.ndarray) -> np.ndarray:
        """``D Y~`` at u points, shape ``(m, n, n)``."""
        u = np.atleast_2d(u)
        if self.matrix is not None:
            return np.broadcast_to(np.array(self.matrix), (u.shape[0], self.dimension, self.dimension))
        return self._jacobian.evaluate(self.field.variables, u, strict=False)

    @cached_property
    def _jacobian(self) -> ExprMatrix:
        return jacobian_matrix(self.field.components, self.field.variables)

    def as_dict(self) -> dict:
        out = {
            "label": self.label,
            "field": [str(c) for c in self.field.components],
            "kernel_residual": float(self.residual),
            "exact": bool(self.exact),
        }
        if self.matrix is not None:
            out["matrix"] = [list(row) for row in self.matrix]
        return out


def kernel_linear(
    A,
    variables: Optional[Sequence[str]] = None,
    label: str = "kernel",
    tol: float = Residuals.kernel.value,
) -> KernelElement:
    """Linear kernel element ``Y~(u) = A u``.

    Linear fields commute with the Euler field; the bracket is built
    symbolically and is expected to simplify to exact zero.

    Raises
    ------
    DimensionMismatch
        if ``A`` is not a square matrix (or does not match ``variables``)
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
        raise DimensionMismatch(f"kernel matrix must be square, got shape {A.shape}")
    n = A.shape[0]
    euler = euler_field(n, variables)
    names = euler.variables
    components = tuple(
        simplify(
            _sum([Expr("mul", (const(A[i, j]), var(names[j]))) for j in range(n) if A[i, j] != 0])
        )
        for i in range(n)
    )
    field = VectorField(components, names)
    bracket = lie_bracket(euler, field)
    exact = bracket.is_zero()
    residual = 0.0 if exact else _bracket_residual(bracket)
    logger.debug("linear kernel %s: exact=%s residual=%.3e", label, exact, residual)
    return KernelElement(
        field=field,
        residual=residual,
        exact=exact,
        matrix=tuple(tuple(float(a) for a in row) for row in A),
        label=label,
        tolerance=tol,
    )


def _bracket_residual(bracket: VectorField, seed: int = 0) -> float:
    count = int(Numerics.kernel_samples.value)
    rng = np.random.default_rng(seed)
    lo, hi = KERNEL_BOX
    u = lo + (hi - lo) * rng.random((count, bracket.dimension))
    values = bracket.evaluate(u, strict=False)
    values = np.where(np.isfinite(values), np.abs(values), np.inf)
    return float(np.max(values))


def kernel_verify(field: VectorField, seed: int = 0) -> float:
    """Max of ``||[X~, Y~](u)||_inf`` over 200 seeded points of ``[0.5, 2]^n``.

    Degree-1 homogeneous fields give a residual at rounding level; anything
    else is visibly nonzero.
    """
    bracket = lie_bracket(euler_field(field.dimension, field.variables), field)
    if bracket.is_zero():
        return 0.0
    return _bracket_residual(bracket, seed)


def kernel_from_expressions(
    texts: Sequence[str],
    variables: Sequence[str],
    label: str = "kernel",
    seed: int = 0,
    tol: float = Residuals.kernel.value,
) -> KernelElement:
    """Kernel element from expression strings over the u variables (runtime verified)."""
    field = VectorField.from_strings(texts, variables)
    residual = kernel_verify(field, seed)
    if residual > tol:
        logger.warning(
            "kernel element %s does not commute with the Euler field (residual %.3e)",
            label,
            residual,
        )
    return KernelElement(
        field=field, residual=residual, exact=residual == 0.0, label=label, tolerance=tol
    )


# Pullback =============================================================================


@dataclass(frozen=True)
class PullbackField:
    """Pointwise evaluator of ``Y = D Phi^{-1} (Y~ o Phi)``.

    Parameters
    ----------
    chart : LinearizingChart
    kernel : KernelElement
    det_threshold : float
        Hadamard-normalized determinant of ``D Phi`` below which a point is
        singular
    """

    chart: LinearizingChart
    kernel: KernelElement
    det_threshold: float = Thresholds.det.value

    @property
    def variables(self) -> Tuple[str, ...]:
        return self.chart.source

    def _frame(self, points: np.ndarray):
        J = self.chart.jacobian_at(points, strict=False)
        bad = ~(normalized_det(J) > self.det_threshold)
        if np.any(bad):
            first = int(np.argmax(bad))
            raise SingularJacobian(f"chart Jacobian singular at {tuple(points[first])}")
        return J, self.chart.apply(points, strict=False)

    def __call__(self, points) -> np.ndarray:
        """``Y`` at points, shape ``(m, n)``.

        Raises
        ------
        SingularJacobian
            at a point where ``D Phi`` is singular
        """
        points = as_point_array(points)
        J, u = self._frame(points)
        return np.linalg.solve(J, self.kernel.evaluate(u)[..., None])[..., 0]

    def jacobian(self, points) -> np.ndarray:
        """Exact ``DY`` from differentiating ``D Phi Y = Y~ o Phi``.

        ``DY = D Phi^{-1} [(D Y~ o Phi) D Phi - S]`` with
        ``S_ij = sum_k d^2 Phi_i / dx_j dx_k Y_k``.
        """
        points = as_point_array(points)
        J, u = self._frame(points)
        Y = np.linalg.solve(J, self.kernel.evaluate(u)[..., None])[..., 0]
        S = np.einsum("mijk,mk->mij", self.chart.hessians_at(points, strict=False), Y)
        rhs = self.kernel.jacobian(u) @ J - S
        return np.linalg.solve(J, rhs)

    def jacobian_fd(self, points, step: float = Numerics.fd_step.value) -> np.ndarray:
        """Central finite difference ``DY``, shape ``(m, n, n)``."""
        points = as_point_array(points)
        m, n = points.shape
        D = np.empty((m, n, n))
        for k in range(n):
            h = step * (1.0 + np.abs(points[:, k]))
            shift = np.zeros_like(points)
            shift[:, k] = h
            D[:, :, k] = (self(points + shift) - self(points - shift)) / (2.0 * h[:, None])
        return D

    @cached_property
    def symbolic(self) -> Optional[VectorField]:
        """Closed form ``adj(D Phi) (Y~ o Phi) / det D Phi`` for ``n <= 4``, else None."""
        n = self.chart.dimension
        if n > SYMBOLIC_LIMIT:
            return None
        mapping = dict(zip(self.chart.target, self.chart.components))
        composed = [substitute(c, mapping) for c in self.kernel.field.components]
        entries = self.chart.jacobian.entries
        components = []
        for i in range(n):
            terms = []
            for j in range(n):
                minor = [
                    row[:i] + row[i + 1:] for r, row in enumerate(entries) if r != j
                ]
                cofactor = det_symbolic(ExprMatrix(minor)) if minor else ONE
                if (i + j) % 2:
                    cofactor = Expr("neg", (cofactor,))
                terms.append(Expr("mul", (cofactor, composed[j])))
            components.append(
                simplify(Expr("div", (_sum(terms), self.chart.determinant)))
            )
        return VectorField(tuple(components), self.chart.source)


def pullback_field(
    chart: LinearizingChart, kernel: KernelElement, det_threshold: float = Thresholds.det.value
) -> PullbackField:
    """Pullback ``Y = Phi^* Y~`` of a kernel element through the chart.

    Raises
    ------
    DimensionMismatch
        if the kernel element lives in another dimension
    """
    if kernel.dimension != chart.dimension:
        raise DimensionMismatch(
            f"kernel element of dimension {kernel.dimension} for a chart of dimension {chart.dimension}"
        )
    return PullbackField(chart, kernel, det_threshold)


# mu ===================================================================================


@dataclass(frozen=True)
class MuFactor:
    """Pointwise evaluator of ``mu(x) = -<grad div X, Y> / div X``."""

    system: IntegrableSystem
    field: Callable[[np.ndarray], np.ndarray]

    def __call__(self, points) -> np.ndarray:
        """``mu`` at points, shape ``(m,)``.

        Raises
        ------
        DegeneratePoint
            where ``|div X| <= delta``
        """
        sys = self.system
        points = as_point_array(points)
        div = evaluate_batch(sys.divergence, sys.variables, points, strict=False)
        bad = ~(np.abs(div) > sys.tolerances.oset)
        if np.any(bad):
            first = int(np.argmax(bad))
            raise DegeneratePoint(f"div X vanishes at {tuple(points[first])}")
        gradient = evaluate_many(sys.divergence_gradient, sys.variables, points, strict=False)
        return -np.einsum("mi,mi->m", gradient, self.field(points)) / div

    @cached_property
    def symbolic(self) -> Optional[Expr]:
        """``-Y(div X) / div X`` when the pullback has a closed form."""
        Y = getattr(self.field, "symbolic", None)
        if Y is None:
            return None
        sys = self.system
        rate = _sum([Expr("mul", (g, c)) for g, c in zip(sys.divergence_gradient, Y.components)])
        return simplify(Expr("neg", (Expr("div", (rate, sys.divergence)),)))


def mu_factor(sys: IntegrableSystem, field) -> MuFactor:
    """The factor ``mu`` in ``[X, Y] = mu X`` for a pulled back symmetry ``Y``."""
    return MuFactor(sys, field)


def mu_from_chart(
    sys: IntegrableSystem,
    chart: LinearizingChart,
    kernel: KernelElement,
    points,
    step: float = 1e-5,
) -> np.ndarray:
    """``mu~ = -Y~(h) / h`` in u-coordinates at ``u = Phi(x)``.

    ``h = -div X o Phi^{-1}`` is evaluated through Newton inversion of the
    chart (started at ``x``) and ``Y~(h)`` by central differences in ``u``.
    Since ``mu = mu~ o Phi`` the result compares directly with
    :class:`MuFactor` at the same points.
    """
    points = as_point_array(points)
    names = sys.variables

    def h(u: np.ndarray, x0: np.ndarray) -> float:
        x = chart_invert(chart, Point(tuple(u), chart.target), Point(tuple(x0), names))
        return -float(evaluate_batch(sys.divergence, names, x.as_array()[None, :])[0])

    values = np.empty(points.shape[0])
    for row, x in enumerate(points):
        u = chart.apply(x[None, :])[0]
        direction = kernel.evaluate(u[None, :])[0]
        hu = h(u, x)
        rate = 0.0
        for k in range(chart.dimension):
            if direction[k] == 0:
                continue
            s = step * (1.0 + abs(u[k]))
            e = np.zeros_like(u)
            e[k] = s
            rate += direction[k] * (h(u + e, x) - h(u - e, x)) / (2.0 * s)
        values[row] = -rate / hu
    return values


# Certificates =========================================================================


def _bracket(sys: IntegrableSystem, points, Y, DY) -> np.ndarray:
    X = sys.field.evaluate(points, strict=False)
    DX = sys.field_jacobian.evaluate(sys.variables, points, strict=False)
    return np.einsum("mij,mj->mi", DY, X) - np.einsum("mij,mj->mi", DX, Y)


def symmetry_check(sys: IntegrableSystem, field, mu, points) -> ResidualReport:
    """Check ``[X, Y] = mu X`` at points.

    ``[X, Y] = DY X - DX Y`` uses the exact ``DY`` of a :class:`PullbackField`
    (or finite differences for any other evaluator) and is cross-checked
    against central differences. The residual is
    ``||[X, Y] - mu X||_inf / (1 + ||X||_inf)``.

    Raises
    ------
    SingularJacobian
        if the chart is singular at one of the points
    """
    points = as_point_array(points)
    tol = sys.tolerances
    if points.size == 0:
        return summarize([], points, tol.symmetry)
    X = sys.field.evaluate(points, strict=False)
    Y = field(points)
    fd = _fd_jacobian(field, points)
    DY = field.jacobian(points) if hasattr(field, "jacobian") else fd
    bracket = _bracket(sys, points, Y, DY)
    bracket_fd = _bracket(sys, points, Y, fd)
    mu_values = np.asarray(mu(points), dtype=float)
    scale = 1.0 + np.max(np.abs(X), axis=-1)
    residuals = np.max(np.abs(bracket - mu_values[:, None] * X), axis=-1) / scale
    fd_residuals = np.max(np.abs(bracket_fd - mu_values[:, None] * X), axis=-1) / scale
    agreement = np.max(np.abs(bracket - bracket_fd), axis=-1) / (
        1.0 + np.max(np.abs(bracket), axis=-1)
    )
    finite = bool(np.all(np.isfinite(mu_values)))
    residuals = np.where(finite, residuals, np.inf)
    return summarize(
        residuals,
        points,
        tol.symmetry,
        fd_residual_max=float(np.max(fd_residuals)),
        fd_agreement_max=float(np.max(agreement)),
        fd_agreement_passed=bool(np.max(agreement) <= tol.fd_agreement),
        mu_finite=finite,
        mu_min=float(np.min(mu_values)) if finite else None,
        mu_max=float(np.max(mu_values)) if finite else None,
    )


def _fd_jacobian(field, points: np.ndarray) -> np.ndarray:
    if hasattr(field, "jacobian_fd"):
        return field.jacobian_fd(points)
    step = Numerics.fd_step.value
    m, n = points.shape
    D = np.empty((m, n, n))
    for k in range(n):
        h = step * (1.0 + np.abs(points[:, k]))
        shift = np.zeros_like(points)
        shift[:, k] = h
        D[:, :, k] = (field(points + shift) - field(points - shift)) / (2.0 * h[:, None])
    return D


@dataclass(frozen=True)
class SymmetryCertificate:
    """A pulled back symmetry with its verification record."""

    kernel: KernelElement
    field: PullbackField
    mu: MuFactor
    report: ResidualReport
    seed: int

    @property
    def label(self) -> str:
        return self.kernel.label

    @property
    def valid(self) -> bool:
        return (
            self.kernel.verified
            and self.report.passed
            and bool(self.report.details.get("mu_finite", True))
            and bool(self.report.details.get("fd_agreement_passed", True))
        )

    def as_dict(self) -> dict:
        return {
            "kernel": self.kernel.as_dict(),
            "seed": int(self.seed),
            "valid": self.valid,
            **self.report.as_dict(),
        }


def symmetry_certificate(
    sys: IntegrableSystem,
    chart: LinearizingChart,
    kernel: KernelElement,
    plan: SamplePlan,
    points=None,
) -> SymmetryCertificate:
    """Pull back ``kernel``, build ``mu`` and check ``[X, Y] = mu X``.

    Parameters
    ----------
    points : array-like, optional
        admissible points to check at; drawn from ``plan`` when omitted

    Raises
    ------
    AdmissibilityExhausted
        if no admissible sample can be drawn
    """
    if points is None:
        points = draw_admissible(sys, plan, chart).points
    points = as_point_array(points)
    Y = pullback_field(chart, kernel, sys.tolerances.det)
    mu = mu_factor(sys, Y)
    report = symmetry_check(sys, Y, mu, points)
    certificate = SymmetryCertificate(kernel, Y, mu, report, plan.seed)
    logger.info(
        "certificate %s: residual max %.3e, valid=%s", kernel.label, report.max, certificate.valid
    )
    return certificate


def apply_rescaling(sys: IntegrableSystem, m: Expr) -> IntegrableSystem:
    """Rescaled system ``X' = m X`` with ``nu' = m nu`` and the same integrals."""
    m = simplify(m)
    if m == ONE:
        return sys
    field = VectorField(
        tuple(simplify(Expr("mul", (m, c))) for c in sys.field.components), sys.variables
    )
    logger.info("rescaled %s by %s", sys.name, m)
    return replace(sys, field=field, nu=simplify(Expr("mul", (m, sys.nu))))


# Flow =================================================================================


@dataclass(frozen=True)
class FlowSpec:
    """Integration settings of the trajectory demonstration.

    Parameters
    ----------
    integrator : {"rk4", "rk45"}
    step : float
        fixed step of RK4, initial step of RK45
    tol : float
        local tolerance of RK45
    horizon : float
        length of the X orbit
    epsilon : float
        group parameter, the time the Y flow runs for
    samples : int
        number of orbit points
    """

    integrator: str = "rk45"
    step: float = 1e-2
    tol: float = 1e-10
    horizon: float = 1.0
    epsilon: float = 0.1
    samples: int = 11

    def __post_init__(self):
        if self.integrator not in METHODS:
            raise ValueError(f"integrator must be one of {METHODS}, got {self.integrator!r}")
        for name in ("step", "tol", "horizon"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")
        if int(self.samples) < 2:
            raise ValueError(f"need at least 2 orbit samples, got {self.samples}")


def _as_callable(field):
    if isinstance(field, VectorField):
        return lambda y: field.evaluate(y, strict=False)
    return field


def flow(field, x0, t: float, spec: FlowSpec = FlowSpec(), bounds=None):
    """Flow of ``field`` for time ``t`` starting at ``x0``.

    Returns a Point for a Point ``x0`` and an array of states otherwise.

    Raises
    ------
    StepFailure
        if adaptive stepping underflows
    DomainExit
        if a state leaves ``bounds``
    """
    y0 = as_point_array(x0)
    y = integrate(
        _as_callable(field),
        y0,
        t,
        method=spec.integrator,
        step=spec.step,
        tol=spec.tol,
        bounds=None if bounds is None else np.asarray(bounds, dtype=float),
    )
    if isinstance(x0, Point):
        return Point(tuple(y[0]), x0.names)
    return y


def _level_drift(sys: IntegrableSystem, states: np.ndarray) -> np.ndarray:
    values = evaluate_many(sys.integrals, sys.variables, states, strict=False)
    return np.abs(values - values[0]) / (1.0 + np.abs(values[0]))


def orbit_permutation_check(
    sys: IntegrableSystem,
    certificate: SymmetryCertificate,
    spec: FlowSpec = FlowSpec(),
    field=None,
    candidates: int = 50,
) -> ResidualReport:
    """Check that the symmetry flow maps an X orbit into one level set.

    An orbit ``x(t_k)`` of ``X`` is integrated from a seeded admissible start
    and every point is moved by the ``epsilon`` flow of ``Y``. The residual at
    the k-th mapped point is ``max_i |F_i(y_k) - F_i(y_0)| / (1 + |F_i(y_0)|)``
    over all integrals ``F_i``; the same drift of the unmapped orbit is
    reported as the integrator baseline. Starting points whose orbit leaves the
    domain box are skipped.

    Parameters
    ----------
    field : callable, optional
        evaluator used instead of the certificate's ``Y``

    Raises
    ------
    DomainExit
        if every candidate start leaves the domain box
    """
    Y = certificate.field if field is None else field
    plan = SamplePlan.for_system(sys, candidates, seed=certificate.seed)
    starts = draw_admissible(sys, plan).points
    times = np.linspace(0.0, spec.horizon, int(spec.samples))
    X = _as_callable(sys.field)
    last_error: Optional[DomainExit] = None
    for x0 in starts:
        try:
            orbit = [x0[None, :]]
            for dt in np.diff(times):
                orbit.append(flow(X, orbit[-1], dt, spec, sys.bounds))
            orbit = np.concatenate(orbit, axis=0)
            mapped = flow(_as_callable(Y), orbit, spec.epsilon, spec, sys.bounds)
        except DomainExit as err:
            last_error = err
            continue
        drift = _level_drift(sys, mapped)
        baseline = _level_drift(sys, orbit)
        logger.info(
            "orbit check from %s: drift %.3e, baseline %.3e",
            tuple(x0),
            float(np.max(drift)),
            float(np.max(baseline)),
        )
        return summarize(
            np.max(drift, axis=-1),
            mapped,
            sys.tolerances.orbit,
            start=[float(c) for c in x0],
            epsilon=float(spec.epsilon),
            horizon=float(spec.horizon),
            integrator=spec.integrator,
            drift=[float(v) for v in np.max(drift, axis=0)],
            baseline=[float(v) for v in np.max(baseline, axis=0)],
        )
    raise last_error or DomainExit("no admissible start point for the orbit check")
