import math

import numpy as np
import pytest

from integrasym.errors import (
    DivisionByZero,
    DomainError,
    EvaluationError,
    ExpressionSyntaxError,
    UnboundVariable,
    UnknownIdentifier,
)
from integrasym.symexpr import (
    ONE,
    ZERO,
    Expr,
    Point,
    apply,
    const,
    diff_expr,
    eval_expr,
    evaluate,
    evaluate_batch,
    free_variables,
    grad,
    parse_expr,
    simplify,
    substitute,
    to_string,
    var,
)

X = ("x1", "x2")
X3 = ("x1", "x2", "x3")

x1, x2 = var("x1"), var("x2")

CORPUS = [
    "x1^2 + 3*x2",
    "x2/x1",
    "-x1^2",
    "exp(x1*x2)",
    "sin(x1)*cos(x2) - x1",
    "ln(x1 + x2^2) / (1 + x1^2)",
    "sqrt(x1^2 + x2^2 + 1)",
    "x1^x2",
    "(x1 - x2)^3 / x1^2",
    "2^x1 - x2^-2",
    "x1*x2*x3 - x3^2/2",
    "exp(-x1^2) * sin(x2*x3)",
    "(x1 + x2 + x3)^2 - 2*x1*x3",
    "1/(x1^2 + x2^2 + x3^2)",
    "cos(x1/x2) + ln(x3)",
]


def corpus():
    """Fixed seeded corpus of random expressions plus the handwritten ones."""
    rng = np.random.default_rng(7)
    leaves = ["x1", "x2", "x3", "0.5", "2", "3.25"]
    unary = ["sin", "cos", "exp", "sqrt", "ln"]

    def build(depth):
        if depth == 0 or rng.random() < 0.25:
            return str(rng.choice(leaves))
        roll = rng.random()
        if roll < 0.2:
            name = str(rng.choice(unary))
            inner = build(depth - 1)
            # keep ln and sqrt on positive arguments
            if name in ("ln", "sqrt"):
                inner = f"1 + ({inner})^2"
            return f"{name}({inner})"
        op = str(rng.choice(["+", "-", "*", "/", "^"]))
        left, right = build(depth - 1), build(depth - 1)
        if op == "/":
            right = f"(2 + ({right})^2)"
        if op == "^":
            left = f"(1 + ({left})^2)"
            right = str(rng.choice(["2", "3", "0.5", "-1"]))
        return f"({left}) {op} ({right})"

    # random expressions stay moderate on the test box so finite differences are meaningful
    grid = 0.4 + 1.2 * rng.random((8, 3))
    texts = list(CORPUS)
    while len(texts) < 200:
        text = build(3)
        values = evaluate_batch(parse_expr(text, X3), X3, grid, strict=False)
        if np.all(np.isfinite(values)) and np.max(np.abs(values)) <= 100.0:
            texts.append(text)
    return texts


def central_difference(e, names, point, index, step=1e-6):
    h = step * (1.0 + abs(point[index]))
    up, down = list(point), list(point)
    up[index] += h
    down[index] -= h
    env_up = dict(zip(names, up))
    env_down = dict(zip(names, down))
    return (evaluate(e, env_up) - evaluate(e, env_down)) / (2.0 * h)


# parse_expr ===========================================================================


def test_parse_precedence():
    assert parse_expr("x1^2 + 3*x2", X) == apply(
        "add", apply("pow", x1, const(2)), apply("mul", const(3), x2)
    )
    assert parse_expr("x2/x1", X) == apply("div", x2, x1)
    assert parse_expr("-x1^2", X) == apply("neg", apply("pow", x1, const(2)))


def test_parse_power_is_right_associative():
    assert parse_expr("x1^x2^2", X) == apply("pow", x1, apply("pow", x2, const(2)))


def test_parse_negative_literal():
    assert parse_expr("-2*x1", X) == apply("mul", const(-2), x1)
    assert parse_expr("-2^2", X) == apply("neg", apply("pow", const(2), const(2)))


def test_parse_functions():
    e = parse_expr("exp(x1*x2) + sqrt(x1)", X)
    assert e.kind == "add"
    assert e.children[0].kind == "exp"
    assert e.children[1] == apply("sqrt", x1)


@pytest.mark.parametrize(
    "text, offset",
    [("x1+*2", 3), ("x1 + (x2", 8), ("x1 $ x2", 3), ("", 0), ("x1 x2", 3)],
)
def test_parse_errors_report_offset(text, offset):
    with pytest.raises(ExpressionSyntaxError) as info:
        parse_expr(text, X)
    assert info.value.offset == offset
    assert f"offset {offset}" in str(info.value)


def test_parse_unknown_identifier():
    with pytest.raises(UnknownIdentifier) as info:
        parse_expr("x1 + y", X)
    assert info.value.offset == 5


def test_offsets_are_bytes():
    with pytest.raises(ExpressionSyntaxError) as info:
        parse_expr("x1\u00a0+ $", X)
    assert info.value.offset == 5


# printing =============================================================================


def test_to_string_canonical():
    assert to_string(parse_expr("x1^2 + 3*x2", X)) == "x1^2 + 3 * x2"
    assert to_string(parse_expr("x1 - (x2 - x1)", X)) == "x1 - (x2 - x1)"
    assert str(parse_expr("x2/x1", X)) == "x2 / x1"


@pytest.mark.parametrize("text", corpus())
def test_print_parse_round_trip(text):
    e = parse_expr(text, X3)
    assert parse_expr(to_string(e), X3) == e
    s = simplify(e)
    assert parse_expr(to_string(s), X3) == s


def test_integer_exponents_round_trip():
    e = apply("pow", x1, const(-3))
    assert to_string(e) == "x1^(-3)"
    assert parse_expr(to_string(e), X) == e


# evaluation ===========================================================================


def test_eval_examples():
    assert eval_expr(parse_expr("x1^2 + 3*x2", X), Point((2.0, 1.0), X)) == 7.0
    assert eval_expr(parse_expr("x2/x1", X), Point((1.0, 0.0), X)) == 0.0
    with pytest.raises(DivisionByZero):
        eval_expr(parse_expr("1/x1", X), Point((0.0, 1.0), X))


def test_eval_domain_errors():
    p = Point((-1.0, 1.0), X)
    with pytest.raises(DomainError):
        eval_expr(parse_expr("ln(x1)", X), p)
    with pytest.raises(DomainError):
        eval_expr(parse_expr("sqrt(x1)", X), p)
    with pytest.raises(DomainError):
        eval_expr(parse_expr("x1^0.5", X), p)
    with pytest.raises(DivisionByZero):
        eval_expr(parse_expr("x2^-1", X), Point((1.0, 0.0), X))


def test_eval_unbound_variable():
    with pytest.raises(UnboundVariable):
        evaluate(parse_expr("x1 + x2", X), {"x1": 1.0})


def test_eval_overflow_is_an_error():
    with pytest.raises(EvaluationError):
        eval_expr(parse_expr("exp(x1)", X), Point((1000.0, 0.0), X))


def test_lenient_batch_gives_nan():
    points = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 2.0]])
    values = evaluate_batch(parse_expr("1/x1 + ln(x2)", X), X, points, strict=False)
    assert np.isneginf(values[0])
    assert np.isnan(values[1])
    assert values[2] == pytest.approx(-1.0 + math.log(2.0))


def test_batch_constant_broadcasts():
    values = evaluate_batch(const(2.5), X, np.zeros((4, 2)))
    assert values.shape == (4,)
    assert np.all(values == 2.5)


def test_point_invariants():
    with pytest.raises(ValueError):
        Point((1.0,), X)
    with pytest.raises(ValueError):
        Point((1.0, float("nan")), X)
    p = Point((1.0, 2.0), X)
    assert p.as_dict() == {"x1": 1.0, "x2": 2.0}
    assert len(p) == 2


# simplify =============================================================================


def test_simplify_examples():
    assert simplify(parse_expr("x1 - x1", X)) == ZERO
    assert simplify(parse_expr("1*(x1+0)", X)) == x1
    assert simplify(parse_expr("(2*3)*x1", X)) == parse_expr("6*x1", X)


def test_simplify_identities():
    assert simplify(parse_expr("0*exp(x1)", X)) == ZERO
    assert simplify(parse_expr("x1^1", X)) == x1
    assert simplify(parse_expr("(x1+x2)^0", X)) == ONE
    assert simplify(parse_expr("--x1", X)) == x1
    assert simplify(parse_expr("ln(exp(x2))", X)) == x2
    assert simplify(parse_expr("x2/x2", X)) == ONE


@pytest.mark.parametrize("text", corpus())
def test_simplify_preserves_value(text):
    e = parse_expr(text, X3)
    s = simplify(e)
    rng = np.random.default_rng(3)
    points = 0.3 + 1.4 * rng.random((5, 3))
    a = evaluate_batch(e, X3, points, strict=False)
    b = evaluate_batch(s, X3, points, strict=False)
    ok = np.isfinite(a) & np.isfinite(b)
    assert np.all(np.abs(a[ok] - b[ok]) <= 1e-12 * (1.0 + np.abs(a[ok])))


# differentiation ======================================================================


def test_diff_examples():
    assert diff_expr(parse_expr("x1^2", X), "x1") == parse_expr("2*x1", X)
    assert diff_expr(parse_expr("x2/x1", X), "x2") == parse_expr("1/x1", X)


def test_diff_exp_matches_finite_difference():
    e = parse_expr("exp(x1*x2)", X)
    d = diff_expr(e, "x1")
    point = (0.3, 0.7)
    exact = evaluate(d, dict(zip(X, point)))
    fd = central_difference(e, X, point, 0)
    assert abs(exact - fd) <= 1e-6 * (1.0 + abs(fd))


@pytest.mark.parametrize("text", corpus())
def test_derivative_oracle(text):
    e = parse_expr(text, X3)
    rng = np.random.default_rng(sum(map(ord, text)))
    for _ in range(5):
        point = tuple(0.4 + 1.2 * rng.random(3))
        for index, name in enumerate(X3):
            exact = evaluate(diff_expr(e, name), dict(zip(X3, point)), strict=False)
            fd = central_difference(e, X3, point, index)
            if not (np.isfinite(exact) and np.isfinite(fd)):
                continue
            assert abs(exact - fd) <= 1e-6 * (1.0 + abs(fd)), (text, name, point)


def test_diff_is_linear():
    a = parse_expr("x1^3*x2", X)
    b = parse_expr("sin(x1)", X)
    left = diff_expr(apply("add", a, b), "x1")
    right = simplify(apply("add", diff_expr(a, "x1"), diff_expr(b, "x1")))
    assert left == right


def test_diff_of_absent_variable_is_zero():
    assert diff_expr(parse_expr("exp(x2)", X), "x1") == ZERO


def test_grad_examples():
    assert grad(parse_expr("x1*x2", X), X) == [x2, x1]
    assert grad(const(4.0), X) == [ZERO, ZERO]
    assert grad(parse_expr("x2/x1", X), X) == [
        parse_expr("-x2/x1^2", X),
        parse_expr("1/x1", X),
    ]


# helpers ==============================================================================


def test_free_variables():
    assert free_variables(parse_expr("x1*sin(x3) + 2", X3)) == frozenset({"x1", "x3"})
    assert free_variables(const(1.0)) == frozenset()


def test_substitute():
    e = parse_expr("x1 + x2^2", X)
    replaced = substitute(e, {"x2": parse_expr("x1 - 1", X)})
    assert free_variables(replaced) == frozenset({"x1"})
    assert evaluate(replaced, {"x1": 3.0}) == 7.0


def test_expressions_are_immutable_and_hashable():
    e = parse_expr("x1 + x2", X)
    with pytest.raises(Exception):
        e.kind = "sub"
    assert len({e, parse_expr("x1 + x2", X)}) == 1


def test_operator_overloads():
    e = x1 * 2 + 1
    assert isinstance(e, Expr)
    assert evaluate(e, {"x1": 3.0}) == 7.0
