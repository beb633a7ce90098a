"""Vector-field calculus and the rescaled Nambu-Poisson realization.

For a system with first integrals ``C_1, ..., C_{n-2}, H`` and rescaling
``nu`` the bracket

.. math::

    \\{f, g\\} = \\nu \\cdot \\frac{\\partial(C_1, \\dots, C_{n-2}, f, g)}
                                  {\\partial(x_1, \\dots, x_n)}

is a Poisson bracket with Casimirs ``C_i``, and a valid system satisfies
``X_i = {x_i, H}``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .constants import Tolerances
from .errors import (
    ArityMismatch,
    DimensionMismatch,
    NonSquare,
    VariableMismatch,
)
from .symexpr import (
    ONE,
    ZERO,
    Expr,
    Point,
    diff_expr,
    evaluate_batch,
    free_variables,
    parse_expr,
    simplify,
    var,
)
from .utils import ResidualReport, as_point_array, convert_to_numpy, relative, summarize

logger = logging.getLogger(__name__)

# Memoized Laplace expansion over column subsets replaces plain cofactor
# expansion above this size.
COFACTOR_LIMIT = 5


def _sum(terms: Sequence[Expr]) -> Expr:
    """Left-folded raw sum (not simplified)."""
    terms = list(terms)
    if not terms:
        return ZERO
    total = terms[0]
    for term in terms[1:]:
        total = Expr("add", (total, term))
    return total


def evaluate_many(
    exprs: Sequence[Expr], names: Sequence[str], points: np.ndarray, strict: bool = True
) -> np.ndarray:
    """Evaluate several expressions at every point, shape ``(m, len(exprs))``."""
    points = np.atleast_2d(points)
    if not exprs:
        return np.zeros((points.shape[0], 0))
    return np.stack(
        [evaluate_batch(e, names, points, strict=strict) for e in exprs], axis=-1
    )


# Types ================================================================================


@dataclass(frozen=True)
class VectorField:
    """Vector field ``X = X_1 d/dx_1 + ... + X_n d/dx_n``.

    Parameters
    ----------
    components : tuple of Expr
        one expression per variable
    variables : tuple of str
        coordinate names
    """

    components: Tuple[Expr, ...]
    variables: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        object.__setattr__(self, "variables", tuple(self.variables))
        if len(self.components) != len(self.variables):
            raise DimensionMismatch(
                f"{len(self.components)} components for {len(self.variables)} variables"
            )
        allowed = set(self.variables)
        for component in self.components:
            extra = free_variables(component) - allowed
            if extra:
                raise VariableMismatch(
                    f"component {component} uses undeclared variables {sorted(extra)}"
                )

    @classmethod
    def from_strings(cls, texts: Sequence[str], variables: Sequence[str]) -> "VectorField":
        return cls(tuple(parse_expr(t, variables) for t in texts), tuple(variables))

    @classmethod
    def zero(cls, variables: Sequence[str]) -> "VectorField":
        return cls(tuple(ZERO for _ in variables), tuple(variables))

    @property
    def dimension(self) -> int:
        return len(self.variables)

    def evaluate(self, points, strict: bool = True) -> np.ndarray:
        """Field values at points, shape ``(m, n)``."""
        return evaluate_many(
            self.components, self.variables, as_point_array(points), strict=strict
        )

    __call__ = evaluate

    def is_zero(self) -> bool:
        return all(simplify(c) == ZERO for c in self.components)


@dataclass(frozen=True)
class ExprMatrix:
    """Rectangular grid of expressions with row and column labels."""

    entries: Tuple[Tuple[Expr, ...], ...]
    row_labels: Tuple[str, ...] = ()
    col_labels: Tuple[str, ...] = ()

    def __post_init__(self):
        entries = tuple(tuple(row) for row in self.entries)
        widths = {len(row) for row in entries}
        if len(widths) > 1:
            raise DimensionMismatch(f"ragged matrix with row widths {sorted(widths)}")
        object.__setattr__(self, "entries", entries)
        rows, cols = self.shape
        row_labels = tuple(self.row_labels) or tuple(f"r{i}" for i in range(rows))
        col_labels = tuple(self.col_labels) or tuple(f"c{j}" for j in range(cols))
        if len(row_labels) != rows or len(col_labels) != cols:
            raise DimensionMismatch("labels do not match the matrix dimensions")
        object.__setattr__(self, "row_labels", row_labels)
        object.__setattr__(self, "col_labels", col_labels)

    @property
    def shape(self) -> Tuple[int, int]:
        rows = len(self.entries)
        return rows, (len(self.entries[0]) if rows else 0)

    def __getitem__(self, index):
        i, j = index
        return self.entries[i][j]

    def evaluate(self, names: Sequence[str], points, strict: bool = True) -> np.ndarray:
        """Numeric matrices at points, shape ``(m, rows, cols)``."""
        points = as_point_array(points)
        rows, cols = self.shape
        flat = [e for row in self.entries for e in row]
        values = evaluate_many(flat, names, points, strict=strict)
        return values.reshape(points.shape[0], rows, cols)


@dataclass(frozen=True)
class IntegrableSystem:
    """One problem instance: a vector field with ``n-1`` first integrals.

    Parameters
    ----------
    field : VectorField
        the vector field ``X``
    casimirs : tuple of Expr
        ``C_1, ..., C_{n-2}`` (empty for ``n = 2``)
    hamiltonian : Expr
        ``H = C_{n-1}``
    nu : Expr
        rescaling function
    domain : tuple of (float, float)
        sampling box, one closed interval per variable
    tolerances : Tolerances, optional
        thresholds, by default the package defaults
    seed : int, optional
        seed for reproducible sampling, by default 0
    name : str, optional
        label used in reports
    """

    field: VectorField
    casimirs: Tuple[Expr, ...]
    hamiltonian: Expr
    nu: Expr
    domain: Tuple[Tuple[float, float], ...]
    tolerances: Tolerances = Tolerances()
    seed: int = 0
    name: str = "system"

    def __post_init__(self):
        object.__setattr__(self, "casimirs", tuple(self.casimirs))
        domain = tuple((float(lo), float(hi)) for lo, hi in self.domain)
        object.__setattr__(self, "domain", domain)
        n = self.field.dimension
        if n < 2:
            raise DimensionMismatch(f"dimension must be at least 2, got {n}")
        if len(self.casimirs) != n - 2:
            raise DimensionMismatch(
                f"a {n}-dimensional system needs {n - 2} Casimirs, got {len(self.casimirs)}"
            )
        if len(domain) != n:
            raise DimensionMismatch(f"domain has {len(domain)} intervals for {n} variables")
        for (lo, hi), name in zip(domain, self.variables):
            if not lo < hi:
                raise ValueError(f"empty domain interval [{lo}, {hi}] for {name}")
        allowed = set(self.variables)
        for scalar in self.integrals + (self.nu,):
            extra = free_variables(scalar) - allowed
            if extra:
                raise VariableMismatch(f"{scalar} uses undeclared variables {sorted(extra)}")

    @property
    def dimension(self) -> int:
        return self.field.dimension

    @property
    def variables(self) -> Tuple[str, ...]:
        return self.field.variables

    @property
    def integrals(self) -> Tuple[Expr, ...]:
        """``(C_1, ..., C_{n-2}, H)``."""
        return self.casimirs + (self.hamiltonian,)

    @property
    def bounds(self) -> np.ndarray:
        return np.array(self.domain, dtype=float)

    @cached_property
    def divergence(self) -> Expr:
        return divergence(self.field)

    @cached_property
    def divergence_gradient(self) -> Tuple[Expr, ...]:
        return tuple(diff_expr(self.divergence, v) for v in self.variables)

    @cached_property
    def field_jacobian(self) -> ExprMatrix:
        return jacobian_matrix(self.field.components, self.variables)

    @cached_property
    def integral_jacobian(self) -> ExprMatrix:
        return jacobian_matrix(self.integrals, self.variables)

    @cached_property
    def hamiltonian_field(self) -> VectorField:
        return hamiltonian_vector_field(self)

    def in_domain(self, points) -> np.ndarray:
        points = as_point_array(points)
        bounds = self.bounds
        return np.all((points >= bounds[:, 0]) & (points <= bounds[:, 1]), axis=-1)


# Symbolic operations ==================================================================


def jacobian_matrix(fields: Sequence[Expr], variables: Sequence[str]) -> ExprMatrix:
    """Jacobian matrix of scalar fields.

    Parameters
    ----------
    fields : sequence of Expr
        ``F_1, ..., F_r``
    variables : sequence of str
        ``x_1, ..., x_c``

    Returns
    -------
    ExprMatrix
        entry ``(i, j)`` is the simplified ``dF_i/dx_j``
    """
    entries = tuple(tuple(diff_expr(f, v) for v in variables) for f in fields)
    return ExprMatrix(
        entries,
        row_labels=tuple(str(f) for f in fields),
        col_labels=tuple(variables),
    )


def _cofactor_det(rows: List[List[Expr]]) -> Expr:
    n = len(rows)
    if n == 1:
        return rows[0][0]
    if n == 2:
        (a, b), (c, d) = rows
        return simplify(Expr("sub", (Expr("mul", (a, d)), Expr("mul", (b, c)))))
    # expand along the row with the most structural zeros
    pivot_row = max(range(n), key=lambda i: sum(e == ZERO for e in rows[i]))
    total: Optional[Expr] = None
    for j, entry in enumerate(rows[pivot_row]):
        if entry == ZERO:
            continue
        minor = [row[:j] + row[j + 1:] for i, row in enumerate(rows) if i != pivot_row]
        term = simplify(Expr("mul", (entry, _cofactor_det(minor))))
        negative = (pivot_row + j) % 2 == 1
        if total is None:
            total = simplify(Expr("neg", (term,))) if negative else term
        else:
            total = simplify(Expr("sub" if negative else "add", (total, term)))
    return ZERO if total is None else total


def _minor_det(rows: List[List[Expr]]) -> Expr:
    n = len(rows)

    # determinant of the trailing rows restricted to ``cols``
    @lru_cache(maxsize=None)
    def minor(cols: Tuple[int, ...]) -> Expr:
        k = n - len(cols)
        if len(cols) == 1:
            return rows[k][cols[0]]
        total: Optional[Expr] = None
        for p, j in enumerate(cols):
            entry = rows[k][j]
            if entry == ZERO:
                continue
            rest = minor(cols[:p] + cols[p + 1:])
            if rest == ZERO:
                continue
            term = simplify(Expr("mul", (entry, rest)))
            if total is None:
                total = simplify(Expr("neg", (term,))) if p % 2 else term
            else:
                total = simplify(Expr("sub" if p % 2 else "add", (total, term)))
        return ZERO if total is None else total

    return minor(tuple(range(n)))


def det_symbolic(matrix: ExprMatrix) -> Expr:
    """Symbolic determinant of a square expression matrix.

    Cofactor expansion with interleaved simplification up to size 5,
    division-free Laplace expansion with memoized minors above. Neither
    path divides, so the result has no poles the matrix entries lack.

    Raises
    ------
    NonSquare
        if the matrix is not square
    """
    rows, cols = matrix.shape
    if rows != cols:
        raise NonSquare(f"determinant of a {rows}x{cols} matrix")
    if rows == 0:
        return ONE
    entries = [list(row) for row in matrix.entries]
    if rows <= COFACTOR_LIMIT:
        return _cofactor_det(entries)
    return _minor_det(entries)


def divergence(X: VectorField) -> Expr:
    """Divergence ``sum_i dX_i/dx_i`` with respect to the Lebesgue measure."""
    return simplify(
        _sum([diff_expr(c, v) for c, v in zip(X.components, X.variables)])
    )


def lie_bracket(X: VectorField, Y: VectorField) -> VectorField:
    """Lie bracket ``[X, Y] = (DY) X - (DX) Y``.

    Sign convention: ``[X, Y](f) = X(Y(f)) - Y(X(f))``.

    Raises
    ------
    VariableMismatch
        if the fields live on different variable lists
    """
    if X.variables != Y.variables:
        raise VariableMismatch(f"{X.variables} != {Y.variables}")
    names = X.variables
    DX = jacobian_matrix(X.components, names)
    DY = jacobian_matrix(Y.components, names)
    components = []
    for k in range(len(names)):
        forward = _sum([Expr("mul", (DY[k, j], X.components[j])) for j in range(len(names))])
        backward = _sum([Expr("mul", (Y.components[j], DX[k, j])) for j in range(len(names))])
        components.append(simplify(Expr("sub", (forward, backward))))
    return VectorField(tuple(components), names)


def directional_derivative(X: VectorField, f: Expr) -> Expr:
    """``X(f) = sum_i X_i df/dx_i``, simplified."""
    return simplify(
        _sum(
            [
                Expr("mul", (c, diff_expr(f, v)))
                for c, v in zip(X.components, X.variables)
            ]
        )
    )


def nambu_bracket(fs: Sequence[Expr], variables: Sequence[str]) -> Expr:
    """Canonical Nambu bracket: the Jacobian determinant of ``n`` functions.

    Raises
    ------
    ArityMismatch
        unless exactly one function per variable is given
    """
    if len(fs) != len(variables):
        raise ArityMismatch(
            f"Nambu bracket over {len(variables)} variables needs {len(variables)} functions, got {len(fs)}"
        )
    return det_symbolic(jacobian_matrix(fs, variables))


def poisson_bracket(sys: IntegrableSystem, f: Expr, g: Expr) -> Expr:
    """Rescaled Nambu-Poisson bracket ``{f, g} = nu {C_1, ..., C_{n-2}, f, g}``."""
    bracket = nambu_bracket(sys.casimirs + (f, g), sys.variables)
    return simplify(Expr("mul", (sys.nu, bracket)))


def hamiltonian_vector_field(sys: IntegrableSystem) -> VectorField:
    """Hamiltonian field with components ``{x_i, H}``.

    For a valid realization this reconstructs the system's vector field.
    """
    components = tuple(
        poisson_bracket(sys, var(name), sys.hamiltonian) for name in sys.variables
    )
    return VectorField(components, sys.variables)


# Pointwise checks =====================================================================


@convert_to_numpy
def realization_check(sys: IntegrableSystem, points) -> ResidualReport:
    """Check ``X = X_H`` at points.

    Parameters
    ----------
    sys : IntegrableSystem
        system to check
    points : list of Point or np.ndarray
        admissible points

    Returns
    -------
    ResidualReport
        residual ``max_i |X_i - (X_H)_i| / (1 + |X_i|)`` per point
    """
    if points.size == 0:
        return summarize([], points, sys.tolerances.realization)
    X = sys.field.evaluate(points, strict=False)
    XH = sys.hamiltonian_field.evaluate(points, strict=False)
    residuals = np.max(relative(X - XH, X), axis=-1)
    report = summarize(residuals, points, sys.tolerances.realization)
    logger.info("realization residual max %.3e over %d points", report.max, report.count)
    return report


@convert_to_numpy
def conservation_check(sys: IntegrableSystem, points) -> ResidualReport:
    """Check ``X(C_i) = 0`` and ``X(H) = 0`` at points.

    The residual of an integral ``F`` is ``|X(F)| / (1 + ||X||_inf)``.
    """
    if points.size == 0:
        return summarize([], points, sys.tolerances.conservation)
    scale = np.max(np.abs(sys.field.evaluate(points, strict=False)), axis=-1)
    derivatives = [directional_derivative(sys.field, F) for F in sys.integrals]
    values = evaluate_many(derivatives, sys.variables, points, strict=False)
    per_integral = relative(values, scale[:, None])
    residuals = np.max(per_integral, axis=-1)
    return summarize(
        residuals,
        points,
        sys.tolerances.conservation,
        integrals=[str(F) for F in sys.integrals],
        integral_max=[float(v) for v in np.max(per_integral, axis=0)],
    )


@convert_to_numpy
def independence_scan(sys: IntegrableSystem, points) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized independence test, see :func:`independence_check`.

    Returns
    -------
    flags : np.ndarray of bool
    proxies : np.ndarray
        best ``(n-1)``-minor divided by the product of the gradient norms
    """
    n = sys.dimension
    J = sys.integral_jacobian.evaluate(sys.variables, points, strict=False)
    scale = np.prod(np.linalg.norm(J, axis=-1), axis=-1)
    minors = np.stack(
        [np.abs(np.linalg.det(np.delete(J, j, axis=-1))) for j in range(n)], axis=-1
    )
    best = np.max(minors, axis=-1)
    with np.errstate(all="ignore"):
        proxies = np.where(scale > 0, best / np.where(scale > 0, scale, 1.0), 0.0)
    proxies = np.where(np.isfinite(proxies), proxies, 0.0)
    flags = (scale > 0) & (best > sys.tolerances.rank * scale)
    return flags, proxies


def independence_check(sys: IntegrableSystem, point: Point) -> Tuple[bool, float]:
    """Functional independence of ``(C_1, ..., C_{n-2}, H)`` at a point.

    Returns
    -------
    bool
        True iff some ``(n-1)``-minor of the Jacobian exceeds
        ``rank tolerance * product of row norms``
    float
        the best minor relative to that scale (a smallest-singular-value proxy)
    """
    flags, proxies = independence_scan(sys, point)
    return bool(flags[0]), float(proxies[0])


@convert_to_numpy
def divergence_identity_check(sys: IntegrableSystem, points) -> ResidualReport:
    """Check ``div X = X(nu)/nu`` (the Nambu part of X is divergence-free)."""
    if points.size == 0:
        return summarize([], points, sys.tolerances.realization)
    div = evaluate_batch(sys.divergence, sys.variables, points, strict=False)
    rate = evaluate_batch(
        simplify(Expr("div", (directional_derivative(sys.field, sys.nu), sys.nu))),
        sys.variables,
        points,
        strict=False,
    )
    return summarize(relative(div - rate, div), points, sys.tolerances.realization)
