"""Exceptions raised by integrasym.

The families map onto command line exit codes: schema and I/O problems exit
with 1, :class:`DegenerateError` with 2 and :class:`NumericFailure` with 3.
"""

from __future__ import annotations


class IntegrasymError(Exception):
    """Base class of all package errors."""


class ExpressionSyntaxError(IntegrasymError, ValueError):
    """Malformed expression text.

    Parameters
    ----------
    message : str
        what went wrong
    offset : int
        byte offset into the expression text
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnknownIdentifier(ExpressionSyntaxError):
    """Identifier that is neither a declared variable nor a function name."""


class EvaluationError(IntegrasymError, ArithmeticError):
    """Numeric evaluation of an expression failed."""


class DivisionByZero(EvaluationError):
    """A denominator vanished (below the machine-zero guard)."""


class DomainError(EvaluationError):
    """ln or sqrt of a negative argument."""


class UnboundVariable(EvaluationError):
    """A variable of the expression has no value."""


class ShapeError(IntegrasymError, ValueError):
    """Inconsistent sizes of symbolic or numeric objects."""


class NonSquare(ShapeError):
    pass


class ArityMismatch(ShapeError):
    pass


class VariableMismatch(ShapeError):
    pass


class DimensionMismatch(ShapeError):
    pass


class DegenerateError(IntegrasymError):
    """The hypotheses of the linearization theorem fail."""


class DegeneratePoint(DegenerateError):
    pass


class SingularJacobian(DegenerateError):
    pass


class AdmissibilityExhausted(DegenerateError):
    """Rejection sampling could not find enough admissible points."""

    def __init__(self, message: str, stats=None):
        super().__init__(message)
        self.stats = stats


class NumericFailure(IntegrasymError):
    """An iterative numerical method gave up."""


class NoConvergence(NumericFailure):
    pass


class StepFailure(NumericFailure):
    pass


class DomainExit(NumericFailure):
    """A trajectory left the domain box."""


class SchemaError(IntegrasymError, ValueError):
    """A system document does not match the expected schema.

    Parameters
    ----------
    message : str
        what went wrong
    path : str
        dotted path of the offending field (e.g. ``"domain.1"``)
    """

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class IoError(IntegrasymError, OSError):
    """Reading or writing a file failed."""


class FileNotFound(IoError, FileNotFoundError):
    """A system document does not exist (and is not a bundled name)."""
