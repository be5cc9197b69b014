import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nrwe.errors import DomainError, ParseError, UnknownIdentifier
from nrwe.expr import Const, differentiate, evaluate, parse_expr


def test_basic_evaluation():
    assert evaluate(parse_expr("sin(t)^2 + x"), {"t": 0.0, "x": 1.0}) == pytest.approx(1.0)
    assert evaluate(parse_expr("exp(x)"), {"x": 0.0}) == pytest.approx(1.0)


def test_precedence():
    cases = {"2^3^2": 512.0, "-2^2": -4.0, "2*3+4": 10.0, "2*(3+4)": 14.0,
             "8/2/2": 2.0, "1-2-3": -4.0, "2**3": 8.0, "-x*3": -6.0}
    for src, want in cases.items():
        assert evaluate(parse_expr(src), {"x": 2.0}) == pytest.approx(want), src


def test_parse_errors():
    with pytest.raises(ParseError) as e:
        parse_expr("sin(t^2")
    assert e.value.offset == 7
    with pytest.raises(ParseError):
        parse_expr("")
    with pytest.raises(ParseError):
        parse_expr("t +")
    with pytest.raises(UnknownIdentifier):
        parse_expr("t + z")
    with pytest.raises(UnknownIdentifier):
        parse_expr("tan(t)")
    with pytest.raises(UnknownIdentifier):
        parse_expr("t", allowed_vars=("x",))


def test_byte_offsets_count_bytes():
    # a two-byte character before the error shifts the offset by two
    with pytest.raises(ParseError) as e:
        parse_expr("x + é")
    assert e.value.offset == 4


def test_domain_errors():
    bad = {"log(x)": 0.0, "sqrt(x)": -1.0, "1/x": 0.0, "x^0.5": -1.0, "x^(-1)": 0.0,
           "exp(x)": 1e4}
    for src, xv in bad.items():
        with pytest.raises(DomainError):
            evaluate(parse_expr(src), {"x": np.array([1.0, xv])})
    with pytest.raises(DomainError):
        evaluate(parse_expr("x"), {})


def test_vectorized():
    e = parse_expr("t * x + 1")
    out = evaluate(e, {"t": np.arange(3.0), "x": np.full(3, 2.0)})
    np.testing.assert_allclose(out, [1.0, 3.0, 5.0])


DERIVATIVES = [
    ("sin(t)^2 + x", "2 * sin(t) * cos(t)"),
    ("t + exp(x)", "1"),
    ("sin(x)^2 + x^2", "0"),
]


@pytest.mark.parametrize("src,want", DERIVATIVES)
def test_symbolic_derivatives(src, want):
    assert str(differentiate(parse_expr(src), "t")) == want


def test_derivative_of_t_free_expression_is_constant():
    d = differentiate(parse_expr("sin(x)^2 + x^2"), "t")
    assert isinstance(d, Const) and d.value == 0.0


FUNCS = ["t^3 - 2*t", "exp(t)*sin(x*t)", "log(t^2 + 1)", "sqrt(t^2 + x^2 + 1)",
         "cos(t)/(2 + sin(x))", "t^x", "(t^2+1)^(x/3)", "abs(t - 0.3)"]


@pytest.mark.parametrize("src", FUNCS)
def test_derivative_matches_finite_difference(src):
    e = parse_expr(src)
    d = differentiate(e, "t")
    rng = np.random.default_rng(11)
    t = rng.uniform(0.5, 2.0, 400)
    x = rng.uniform(0.1, 2.0, 400)
    h = 1e-5
    fd = (evaluate(e, {"t": t + h, "x": x}) - evaluate(e, {"t": t - h, "x": x})) / (2 * h)
    sym = np.broadcast_to(evaluate(d, {"t": t, "x": x}), t.shape)
    assert np.all(np.abs(sym - fd) <= 1e-6 * (1 + np.abs(sym)))


@pytest.mark.parametrize("src", FUNCS)
def test_second_derivative_finite(src):
    e = parse_expr(src)
    d2 = differentiate(differentiate(e, "t"), "t")
    t = np.linspace(0.5, 2.0, 50)
    x = np.linspace(0.1, 2.0, 50)
    assert np.all(np.isfinite(evaluate(e, {"t": t, "x": x})))
    assert np.all(np.isfinite(evaluate(d2, {"t": t, "x": x})))


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_printed_form_round_trips(t, x):
    e = parse_expr("-(t - x)^2 * exp(-x) + sin(t / (1 + x^2))")
    again = parse_expr(str(e))
    env = {"t": t, "x": x}
    assert evaluate(again, env) == pytest.approx(evaluate(e, env), rel=1e-12, abs=1e-12)
