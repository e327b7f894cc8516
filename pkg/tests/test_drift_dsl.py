import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levy_exit.drift_dsl import (
    Add,
    DriftEvalError,
    DriftParseError,
    Mul,
    Neg,
    Num,
    Param,
    Pow,
    Sub,
    Var,
    compile_rpn,
    eval_drift,
    free_parameters,
    parse_drift,
    to_polynomial,
    to_text,
)


def test_parse_examples():
    assert parse_drift("-x") == Neg(Var())
    assert parse_drift("x - beta*x^3") == Sub(Var(), Mul(Param("beta"), Pow(Var(), 3)))


def test_double_minus_is_unary_after_binary():
    expr = parse_drift("x - - 3")
    assert expr == Sub(Var(), Neg(Num(3.0)))
    assert eval_drift(expr, {}, 1.0) == 4.0


def test_precedence():
    # ^ binds tighter than unary minus, which binds tighter than * and /
    assert eval_drift(parse_drift("-x^2"), {}, 3.0) == -9.0
    assert eval_drift(parse_drift("2*x^2^1"), {}, 3.0) == 18.0
    assert eval_drift(parse_drift("8 / 4 / 2"), {}, 0.0) == 1.0
    assert eval_drift(parse_drift("1 - 2 - 3"), {}, 0.0) == -4.0
    assert eval_drift(parse_drift("(1 - x) * (1 + x)"), {}, 0.5) == 0.75
    assert parse_drift("a + b * c") == Add(Param("a"), Mul(Param("b"), Param("c")))


def test_whitespace_insignificant():
    assert parse_drift(" x-beta * x ^ 3 ") == parse_drift("x - beta*x^3")


@pytest.mark.parametrize("text", ["", "   ", "x^-1", "x^2.5", "x^b", "x +", "(x", "x)", "2x", "x $ 1", "1e"])
def test_parse_errors_are_structured(text):
    with pytest.raises(DriftParseError) as info:
        parse_drift(text)
    assert 0 <= info.value.position <= len(text)
    assert "^" in str(info.value).splitlines()[-1]


def test_parse_error_position_points_at_token():
    with pytest.raises(DriftParseError) as info:
        parse_drift("x + * 2")
    assert info.value.position == 4


def test_eval_examples():
    assert eval_drift(parse_drift("x - beta*x^3"), {"beta": 1.5}, 2.0) == -10.0
    assert eval_drift(parse_drift("-x"), {}, 0.25) == -0.25
    assert eval_drift(parse_drift("x - x^3"), {}, 1.0) == 0.0


def test_eval_vectorized():
    xs = np.linspace(-2, 2, 9)
    np.testing.assert_array_equal(eval_drift(parse_drift("x - x^3"), {}, xs), xs - xs**3)


def test_eval_errors():
    with pytest.raises(DriftEvalError, match="beta"):
        eval_drift(parse_drift("x - beta*x^3"), {}, 1.0)
    with pytest.raises(DriftEvalError):
        eval_drift(parse_drift("1/x"), {}, 0.0)
    with pytest.raises(DriftEvalError):
        eval_drift(parse_drift("1/x"), {}, np.array([1.0, 0.0]))


def test_free_parameters():
    assert free_parameters(parse_drift("x - beta*x^3")) == ("beta",)
    assert free_parameters(parse_drift("-x")) == ()
    assert free_parameters(parse_drift("a*x + b*x^3 + a")) == ("a", "b")


@given(st.integers(-50, 50), st.integers(-5, 5), st.integers(0, 4))
def test_exact_on_integer_polynomials(c, x, n):
    expr = parse_drift(f"{c}*x^{n} - x + 3")
    assert eval_drift(expr, {}, float(x)) == float(c * x**n - x + 3)


# random well-formed expressions for the round-trip and compiler checks
_leaf = st.one_of(
    st.just(Var()),
    st.sampled_from([Param("a"), Param("beta")]),
    st.floats(0, 100, allow_nan=False).map(lambda v: Num(round(v, 3))),
)


def _extend(children):
    return st.one_of(
        children.map(Neg),
        st.tuples(children, children).map(lambda t: Add(*t)),
        st.tuples(children, children).map(lambda t: Sub(*t)),
        st.tuples(children, children).map(lambda t: Mul(*t)),
        st.tuples(children, st.integers(0, 3)).map(lambda t: Pow(*t)),
    )


exprs = st.recursive(_leaf, _extend, max_leaves=12)


@given(exprs)
@settings(max_examples=300, deadline=None)
def test_print_parse_round_trip(expr):
    assert parse_drift(to_text(expr)) == expr


@given(st.text(alphabet="x+-*/^() 0123456789.abeta", max_size=20))
@settings(max_examples=500, deadline=None)
def test_parser_never_crashes(text):
    try:
        parse_drift(text)
    except DriftParseError:
        pass


@given(st.text(max_size=30))
@settings(max_examples=300, deadline=None)
def test_parser_never_crashes_on_arbitrary_text(text):
    try:
        parse_drift(text)
    except DriftParseError:
        pass


@given(exprs, st.floats(-2, 2))
@settings(max_examples=200, deadline=None)
def test_polynomial_and_rpn_agree_with_tree(expr, x):
    env = {"a": 0.7, "beta": -1.3}
    ref = eval_drift(expr, env, x)
    coeffs = to_polynomial(expr, env)
    assert coeffs is not None
    assert np.polynomial.polynomial.polyval(x, coeffs) == pytest.approx(ref, rel=1e-9, abs=1e-9)
    ops, args = compile_rpn(expr, env)
    assert ops.dtype == np.int64 and args.shape == ops.shape


def test_to_polynomial_rejects_division_by_x():
    assert to_polynomial(parse_drift("1/x"), {}) is None
    np.testing.assert_allclose(to_polynomial(parse_drift("x/2 - x^3/4"), {}), [0, 0.5, 0, -0.25])
