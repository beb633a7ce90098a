"""Symbolic expressions over named real variables.

Grammar (standard precedence, ``^`` right associative and binding tighter
than unary minus)::

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := '-' factor | base ('^' factor)?
    base   := number | ident | func '(' expr ')' | '(' expr ')'
    func   := sin | cos | exp | ln | sqrt

A minus sign directly in front of a number literal that is not raised to a
power is read as a negative constant, so ``-2*x1`` is ``mul(-2, x1)`` while
``-x1^2`` is ``neg(pow(x1, 2))``.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .constants import Numerics
from .errors import (
    DivisionByZero,
    DomainError,
    EvaluationError,
    ExpressionSyntaxError,
    UnboundVariable,
    UnknownIdentifier,
)

logger = logging.getLogger(__name__)

FUNCTIONS = ("sin", "cos", "exp", "ln", "sqrt")
UNARY = ("neg",) + FUNCTIONS
BINARY = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "^"}
_PRECEDENCE = {"add": 1, "sub": 1, "mul": 2, "div": 2, "neg": 3, "pow": 4}
_ATOM = 5

DIVISION_GUARD = Numerics.division_guard.value


@dataclass(frozen=True, eq=False, repr=False)
class Expr:
    """Immutable expression tree node.

    Parameters
    ----------
    kind : str
        ``"const"``, ``"var"``, one of :data:`UNARY` or one of :data:`BINARY`
    children : tuple of Expr
        operands (empty for constants and variables)
    value : float, optional
        value of a constant
    name : str, optional
        name of a variable
    """

    kind: str
    children: Tuple["Expr", ...] = ()
    value: Optional[float] = None
    name: Optional[str] = None

    def __post_init__(self):
        if self.kind == "const":
            if self.value is None or not math.isfinite(self.value):
                raise ValueError(f"constant must be a finite real, got {self.value!r}")
            object.__setattr__(self, "value", float(self.value))
        elif self.kind == "var":
            if not self.name:
                raise ValueError("variable needs a name")
        elif self.kind in UNARY:
            if len(self.children) != 1:
                raise ValueError(f"{self.kind} takes one operand")
        elif self.kind in BINARY:
            if len(self.children) != 2:
                raise ValueError(f"{self.kind} takes two operands")
        else:
            raise ValueError(f"unknown node kind {self.kind!r}")
        object.__setattr__(
            self, "_hash", hash((self.kind, self.children, self.value, self.name))
        )

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, Expr):
            return NotImplemented
        return (
            self._hash == other._hash
            and self.kind == other.kind
            and self.value == other.value
            and self.name == other.name
            and self.children == other.children
        )

    def __repr__(self):
        return f"Expr({to_string(self)!r})"

    def __str__(self):
        return to_string(self)

    def __add__(self, other):
        return Expr("add", (self, _coerce(other)))

    def __radd__(self, other):
        return Expr("add", (_coerce(other), self))

    def __sub__(self, other):
        return Expr("sub", (self, _coerce(other)))

    def __rsub__(self, other):
        return Expr("sub", (_coerce(other), self))

    def __mul__(self, other):
        return Expr("mul", (self, _coerce(other)))

    def __rmul__(self, other):
        return Expr("mul", (_coerce(other), self))

    def __truediv__(self, other):
        return Expr("div", (self, _coerce(other)))

    def __rtruediv__(self, other):
        return Expr("div", (_coerce(other), self))

    def __pow__(self, other):
        return Expr("pow", (self, _coerce(other)))

    def __neg__(self):
        return Expr("neg", (self,))

    @property
    def is_constant(self) -> bool:
        return self.kind == "const"


def const(value: float) -> Expr:
    """Constant node."""
    return Expr("const", value=float(value))


def var(name: str) -> Expr:
    """Variable node."""
    return Expr("var", name=name)


def apply(kind: str, *operands: Expr) -> Expr:
    """Build a unary or binary node of the given kind."""
    return Expr(kind, tuple(_coerce(op) for op in operands))


def _coerce(value) -> Expr:
    if isinstance(value, Expr):
        return value
    return const(value)


ZERO = const(0.0)
ONE = const(1.0)


def _is_zero(e: Expr) -> bool:
    return e.kind == "const" and e.value == 0.0


def _is_one(e: Expr) -> bool:
    return e.kind == "const" and e.value == 1.0


def _is_negative_const(e: Expr) -> bool:
    return e.kind == "const" and math.copysign(1.0, e.value) < 0 and e.value != 0.0


@lru_cache(maxsize=65536)
def free_variables(e: Expr) -> frozenset:
    """Names of the variables occurring in ``e``."""
    if e.kind == "var":
        return frozenset((e.name,))
    if e.kind == "const":
        return frozenset()
    return frozenset().union(*(free_variables(c) for c in e.children))


# Point ================================================================================


@dataclass(frozen=True)
class Point:
    """A point of the phase space with named coordinates.

    Parameters
    ----------
    coordinates : sequence of float
        finite coordinate values
    names : sequence of str
        variable names, one per coordinate
    """

    coordinates: Tuple[float, ...]
    names: Tuple[str, ...]

    def __post_init__(self):
        coords = tuple(float(c) for c in self.coordinates)
        names = tuple(self.names)
        if len(coords) != len(names):
            raise ValueError(
                f"{len(coords)} coordinates given for {len(names)} variables"
            )
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"coordinates must be finite, got {coords}")
        object.__setattr__(self, "coordinates", coords)
        object.__setattr__(self, "names", names)

    def __len__(self):
        return len(self.coordinates)

    def __getitem__(self, item):
        return self.coordinates[item]

    def as_dict(self) -> Dict[str, float]:
        return dict(zip(self.names, self.coordinates))

    def as_array(self) -> np.ndarray:
        return np.array(self.coordinates, dtype=float)


# Parsing ==============================================================================

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^()])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    offset: int


def _tokenize(text: str) -> List[_Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        match = _TOKEN.match(text, pos)
        if match is None:
            raise ExpressionSyntaxError(
                f"unexpected character {text[pos]!r}", _byte_offset(text, pos)
            )
        if match.lastgroup != "ws":
            tokens.append(
                _Token(match.lastgroup, match.group(), _byte_offset(text, pos))
            )
        pos = match.end()
    tokens.append(_Token("end", "", _byte_offset(text, len(text))))
    return tokens


def _byte_offset(text: str, pos: int) -> int:
    return len(text[:pos].encode("utf-8"))


class _Parser:
    """Recursive descent over the token list, one method per grammar rule."""

    def __init__(self, text: str, variables: Iterable[str]):
        self.tokens = _tokenize(text)
        self.pos = 0
        self.variables = frozenset(variables)

    @property
    def current(self) -> _Token:
        return self.tokens[self.pos]

    def peek(self, ahead: int = 1) -> _Token:
        return self.tokens[min(self.pos + ahead, len(self.tokens) - 1)]

    def advance(self) -> _Token:
        token = self.tokens[self.pos]
        self.pos += 1
        return token

    def expect(self, text: str) -> _Token:
        if self.current.text != text:
            raise ExpressionSyntaxError(
                f"expected {text!r}, found {self.current.text or 'end of input'!r}",
                self.current.offset,
            )
        return self.advance()

    def parse(self) -> Expr:
        tree = self.expr()
        if self.current.kind != "end":
            raise ExpressionSyntaxError(
                f"unexpected {self.current.text!r}", self.current.offset
            )
        return tree

    def expr(self) -> Expr:
        left = self.term()
        while self.current.text in ("+", "-"):
            op = self.advance().text
            left = Expr("add" if op == "+" else "sub", (left, self.term()))
        return left

    def term(self) -> Expr:
        left = self.factor()
        while self.current.text in ("*", "/"):
            op = self.advance().text
            left = Expr("mul" if op == "*" else "div", (left, self.factor()))
        return left

    def factor(self) -> Expr:
        if self.current.text == "-":
            self.advance()
            if self.current.kind == "num" and self.peek().text != "^":
                return const(-float(self.advance().text))
            return Expr("neg", (self.factor(),))
        base = self.base()
        if self.current.text == "^":
            self.advance()
            return Expr("pow", (base, self.factor()))
        return base

    def base(self) -> Expr:
        token = self.current
        if token.kind == "num":
            self.advance()
            return const(float(token.text))
        if token.kind == "ident":
            self.advance()
            if token.text in FUNCTIONS and token.text not in self.variables:
                self.expect("(")
                argument = self.expr()
                self.expect(")")
                return Expr(token.text, (argument,))
            if token.text in self.variables:
                return var(token.text)
            raise UnknownIdentifier(f"unknown identifier {token.text!r}", token.offset)
        if token.text == "(":
            self.advance()
            inner = self.expr()
            self.expect(")")
            return inner
        raise ExpressionSyntaxError(
            f"unexpected {token.text or 'end of input'!r}", token.offset
        )


def parse_expr(text: str, variables: Sequence[str]) -> Expr:
    """Parse an expression.

    Parameters
    ----------
    text : str
        expression text, see the module docstring for the grammar
    variables : sequence of str
        names that may appear as variables

    Returns
    -------
    Expr
        the unique parse tree (not simplified)

    Raises
    ------
    ExpressionSyntaxError
        with the byte offset of the offending token
    UnknownIdentifier
        for names that are neither variables nor functions
    """
    return _Parser(text, variables).parse()


# Printing =============================================================================


def _precedence(e: Expr) -> int:
    if e.kind == "const":
        return _PRECEDENCE["neg"] if _is_negative_const(e) else _ATOM
    return _PRECEDENCE.get(e.kind, _ATOM)


def _format_number(value: float) -> str:
    magnitude = abs(value)
    if magnitude.is_integer() and magnitude < 1e15:
        text = str(int(magnitude))
    else:
        text = repr(magnitude)
    return "-" + text if math.copysign(1.0, value) < 0 else text


def _wrap(text: str, parens: bool) -> str:
    return f"({text})" if parens else text


def to_string(e: Expr) -> str:
    """Canonical text of an expression.

    ``parse_expr(to_string(e), names)`` returns a tree structurally equal to
    ``e``.
    """
    kind = e.kind
    if kind == "const":
        return _format_number(e.value)
    if kind == "var":
        return e.name
    if kind in FUNCTIONS:
        return f"{kind}({to_string(e.children[0])})"
    if kind == "neg":
        (child,) = e.children
        parens = (
            _precedence(child) < _PRECEDENCE["neg"]
            or child.kind in ("const", "neg")
        )
        return "-" + _wrap(to_string(child), parens)
    left, right = e.children
    if kind == "pow":
        base = _wrap(to_string(left), _precedence(left) < _ATOM)
        exponent = _wrap(to_string(right), _precedence(right) < _PRECEDENCE["pow"])
        return f"{base}^{exponent}"
    prec = _PRECEDENCE[kind]
    left_text = _wrap(to_string(left), _precedence(left) < prec)
    right_prec = _precedence(right)
    right_text = _wrap(
        to_string(right), right_prec <= prec or right_prec == _PRECEDENCE["neg"]
    )
    return f"{left_text} {BINARY[kind]} {right_text}"


# Evaluation ===========================================================================

_NUMPY_UNARY = {
    "neg": np.negative,
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "ln": np.log,
    "sqrt": np.sqrt,
}

Number = Union[float, np.ndarray]


def _evaluate(e: Expr, env: Mapping[str, Number], strict: bool) -> Number:
    kind = e.kind
    if kind == "const":
        return e.value
    if kind == "var":
        try:
            return env[e.name]
        except KeyError:
            raise UnboundVariable(f"variable {e.name!r} has no value") from None
    if kind in UNARY:
        arg = _evaluate(e.children[0], env, strict)
        if strict:
            if kind == "ln" and np.any(np.asarray(arg) <= 0):
                raise DomainError(f"ln of non-positive argument in {to_string(e)}")
            if kind == "sqrt" and np.any(np.asarray(arg) < 0):
                raise DomainError(f"sqrt of negative argument in {to_string(e)}")
        return _NUMPY_UNARY[kind](arg)
    left = _evaluate(e.children[0], env, strict)
    right = _evaluate(e.children[1], env, strict)
    if kind == "add":
        return np.add(left, right)
    if kind == "sub":
        return np.subtract(left, right)
    if kind == "mul":
        return np.multiply(left, right)
    if kind == "div":
        small = np.abs(right) <= DIVISION_GUARD
        if np.any(small):
            if strict:
                raise DivisionByZero(f"zero denominator in {to_string(e)}")
            right = np.where(small, np.nan, right)
        return np.divide(left, right)
    # pow
    if strict:
        base = np.asarray(left)
        exponent = np.asarray(right)
        integral = np.equal(np.mod(exponent, 1.0), 0.0)
        if np.any((base < 0) & ~integral):
            raise DomainError(f"negative base with fractional exponent in {to_string(e)}")
        if np.any((np.abs(base) <= DIVISION_GUARD) & (exponent < 0)):
            raise DivisionByZero(f"zero raised to a negative power in {to_string(e)}")
    return np.power(np.asarray(left, dtype=float), right)


def evaluate(e: Expr, env: Mapping[str, Number], strict: bool = True) -> Number:
    """Evaluate an expression for scalar or array valued variables.

    Parameters
    ----------
    e : Expr
        expression
    env : mapping
        variable name to a float or an array (all arrays of one shape)
    strict : bool, optional
        raise on poles, domain violations and overflow; when False the
        offending entries come out as NaN or inf instead, by default True

    Returns
    -------
    float or np.ndarray
        IEEE double value(s)

    Raises
    ------
    DivisionByZero, DomainError, UnboundVariable, EvaluationError
        in strict mode
    """
    with np.errstate(all="ignore"):
        result = _evaluate(e, env, strict)
    if strict and not np.all(np.isfinite(result)):
        raise EvaluationError(f"non-finite value of {to_string(e)}")
    return result


def evaluate_batch(
    e: Expr, names: Sequence[str], points: np.ndarray, strict: bool = True
) -> np.ndarray:
    """Evaluate ``e`` at every row of ``points`` (shape ``(m, n)``)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    env = {name: points[:, i] for i, name in enumerate(names)}
    result = evaluate(e, env, strict=strict)
    return np.array(np.broadcast_to(result, (points.shape[0],)), dtype=float)


def eval_expr(e: Expr, p: Point) -> float:
    """Evaluate an expression at a point.

    Parameters
    ----------
    e : Expr
        expression whose variables are all named by ``p``
    p : Point
        evaluation point

    Returns
    -------
    float
        value at the point
    """
    return float(evaluate(e, p.as_dict(), strict=True))


# Simplification =======================================================================


def _fold(kind: str, values: Sequence[float]) -> Optional[float]:
    try:
        if kind == "neg":
            result = -values[0]
        elif kind == "sin":
            result = math.sin(values[0])
        elif kind == "cos":
            result = math.cos(values[0])
        elif kind == "exp":
            result = math.exp(values[0])
        elif kind == "ln":
            result = math.log(values[0])
        elif kind == "sqrt":
            result = math.sqrt(values[0])
        elif kind == "add":
            result = values[0] + values[1]
        elif kind == "sub":
            result = values[0] - values[1]
        elif kind == "mul":
            result = values[0] * values[1]
        elif kind == "div":
            if abs(values[1]) <= DIVISION_GUARD:
                return None
            result = values[0] / values[1]
        else:
            result = math.pow(values[0], values[1])
    except (ValueError, ZeroDivisionError, OverflowError):
        return None
    return result if math.isfinite(result) else None


def _rewrite(e: Expr) -> Expr:
    """Apply root rewrite rules to a node whose children are simplified."""
    kind = e.kind
    if kind in ("const", "var"):
        return e
    children = e.children
    if all(c.kind == "const" for c in children):
        folded = _fold(kind, [c.value for c in children])
        if folded is not None:
            return const(folded)
    if kind == "neg":
        (child,) = children
        if child.kind == "neg":
            return child.children[0]
        return e
    if kind == "ln":
        (child,) = children
        if child.kind == "exp":
            return child.children[0]
        return e
    if kind in FUNCTIONS:
        return e

    a, b = children
    if kind == "add":
        if _is_zero(a):
            return b
        if _is_zero(b):
            return a
        if b.kind == "neg":
            return _rewrite(Expr("sub", (a, b.children[0])))
        if _is_negative_const(b):
            return _rewrite(Expr("sub", (a, const(-b.value))))
        if a.kind == "neg":
            return _rewrite(Expr("sub", (b, a.children[0])))
        return e
    if kind == "sub":
        if _is_zero(b):
            return a
        if a == b:
            return ZERO
        if _is_zero(a):
            return _rewrite(Expr("neg", (b,)))
        if b.kind == "neg":
            return _rewrite(Expr("add", (a, b.children[0])))
        if _is_negative_const(b):
            return _rewrite(Expr("add", (a, const(-b.value))))
        return e
    if kind == "mul":
        if _is_zero(a) or _is_zero(b):
            return ZERO
        if _is_one(a):
            return b
        if _is_one(b):
            return a
        if b.kind == "const" and a.kind != "const":
            return _rewrite(Expr("mul", (b, a)))
        if a.kind == "const":
            if a.value == -1.0:
                return _rewrite(Expr("neg", (b,)))
            if b.kind == "mul" and b.children[0].kind == "const":
                scaled = a.value * b.children[0].value
                if math.isfinite(scaled):
                    return _rewrite(Expr("mul", (const(scaled), b.children[1])))
        if a.kind == "neg":
            return _rewrite(Expr("neg", (_rewrite(Expr("mul", (a.children[0], b))),)))
        if b.kind == "neg":
            return _rewrite(Expr("neg", (_rewrite(Expr("mul", (a, b.children[0]))),)))
        return e
    if kind == "div":
        if _is_one(b):
            return a
        if _is_zero(a) and not _is_zero(b):
            return ZERO
        if a == b:
            return ONE
        if b.kind == "const" and b.value == -1.0:
            return _rewrite(Expr("neg", (a,)))
        return e
    # pow
    if _is_zero(b):
        return ONE
    if _is_one(b):
        return a
    if _is_one(a):
        return ONE
    if (
        a.kind == "pow"
        and b.kind == "const"
        and a.children[1].kind == "const"
        and b.value.is_integer()
        and a.children[1].value.is_integer()
    ):
        exponent = a.children[1].value * b.value
        if math.isfinite(exponent):
            return _rewrite(Expr("pow", (a.children[0], const(exponent))))
    return e


def simplify(e: Expr) -> Expr:
    """Local rewriting simplification.

    Folds constants and applies ``0+e -> e``, ``0*e -> 0``, ``1*e -> e``,
    ``e^1 -> e``, ``e^0 -> 1``, ``e-e -> 0`` (structurally equal operands)
    together with sign normalizations. The result has the same value as
    ``e`` wherever both are defined; no canonical polynomial form is sought.
    """
    return _simplify(e)


@lru_cache(maxsize=65536)
def _simplify(e: Expr) -> Expr:
    if e.kind in ("const", "var"):
        return e
    return _rewrite(Expr(e.kind, tuple(_simplify(c) for c in e.children)))


# Differentiation ======================================================================


def _derivative(e: Expr, v: str) -> Expr:
    if v not in free_variables(e):
        return ZERO
    kind = e.kind
    if kind == "var":
        return ONE
    if kind == "neg":
        return Expr("neg", (_derivative(e.children[0], v),))
    if kind in FUNCTIONS:
        u = e.children[0]
        du = _derivative(u, v)
        if kind == "sin":
            return Expr("mul", (Expr("cos", (u,)), du))
        if kind == "cos":
            return Expr("neg", (Expr("mul", (Expr("sin", (u,)), du)),))
        if kind == "exp":
            return Expr("mul", (e, du))
        if kind == "ln":
            return Expr("div", (du, u))
        return Expr("div", (du, Expr("mul", (const(2.0), e))))
    a, b = e.children
    if kind in ("add", "sub"):
        return Expr(kind, (_derivative(a, v), _derivative(b, v)))
    if kind == "mul":
        return Expr(
            "add",
            (
                Expr("mul", (_derivative(a, v), b)),
                Expr("mul", (a, _derivative(b, v))),
            ),
        )
    if kind == "div":
        if v not in free_variables(b):
            return Expr("div", (_derivative(a, v), b))
        square = Expr("pow", (b, const(2.0)))
        if v not in free_variables(a):
            return Expr("div", (Expr("neg", (Expr("mul", (a, _derivative(b, v))),)), square))
        numerator = Expr(
            "sub",
            (
                Expr("mul", (_derivative(a, v), b)),
                Expr("mul", (a, _derivative(b, v))),
            ),
        )
        return Expr("div", (numerator, square))
    # pow
    if v not in free_variables(b):
        if b.kind == "const":
            lowered = const(b.value - 1.0)
        else:
            lowered = Expr("sub", (b, ONE))
        return Expr(
            "mul",
            (Expr("mul", (b, Expr("pow", (a, lowered)))), _derivative(a, v)),
        )
    # a^b = exp(b ln a): d = a^b (b' ln a + b a'/a)
    inner = Expr(
        "add",
        (
            Expr("mul", (_derivative(b, v), Expr("ln", (a,)))),
            Expr("div", (Expr("mul", (b, _derivative(a, v))), a)),
        ),
    )
    return Expr("mul", (e, inner))


def diff_expr(e: Expr, v: str) -> Expr:
    """Exact partial derivative of ``e`` with respect to variable ``v``.

    Parameters
    ----------
    e : Expr
        expression
    v : str
        variable name

    Returns
    -------
    Expr
        simplified derivative
    """
    return simplify(_derivative(e, v))


def grad(e: Expr, variables: Sequence[str]) -> List[Expr]:
    """Gradient of ``e``: one simplified partial derivative per variable."""
    return [diff_expr(e, v) for v in variables]


def substitute(e: Expr, mapping: Mapping[str, Expr]) -> Expr:
    """Replace variables by expressions (result not simplified)."""
    if e.kind == "var":
        return mapping.get(e.name, e)
    if e.kind == "const":
        return e
    return Expr(e.kind, tuple(substitute(c, mapping) for c in e.children))
