import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bec.expr import (
    Binary,
    Const,
    DomainError,
    EvalPoint,
    ParseError,
    Power,
    Unary,
    Var,
    eval_expr,
    eval_many,
    format_expr,
    gradient,
    hessian,
    max_indices,
    parse_expr,
)


def fd_gradient(e, p, h=1e-6):
    base = list(p.x) + list(p.y)
    n = len(p.x)
    out = np.empty(len(base))
    for k in range(len(base)):
        up = list(base)
        dn = list(base)
        up[k] += h
        dn[k] -= h
        out[k] = (
            eval_expr(e, EvalPoint(tuple(up[:n]), tuple(up[n:])))
            - eval_expr(e, EvalPoint(tuple(dn[:n]), tuple(dn[n:])))
        ) / (2 * h)
    return out


# ---------------------------------------------------------------------------
# parsing


def test_parse_simple_polynomial():
    e = parse_expr("(x1 - y1)^2", 1, 1)
    assert e == Power(Binary("sub", Var("x", 1), Var("y", 1)), 2)


def test_parse_precedence_and_associativity():
    e = parse_expr("1 + 2 * 3 - 4", 0, 0)
    assert eval_expr(e, EvalPoint((), ())) == 3.0
    e = parse_expr("2 - 3 - 4", 0, 0)
    assert eval_expr(e, EvalPoint((), ())) == -5.0
    e = parse_expr("8 / 2 / 2", 0, 0)
    assert eval_expr(e, EvalPoint((), ())) == 2.0


def test_minus_binds_tighter_than_power():
    # '-' is part of the atom, so -x1^2 squares the negated variable
    e = parse_expr("-x1^2", 1, 0)
    assert eval_expr(e, EvalPoint((3.0,), ())) == 9.0
    e = parse_expr("0 - x1^2", 1, 0)
    assert eval_expr(e, EvalPoint((3.0,), ())) == -9.0


def test_parse_functions_and_nesting():
    e = parse_expr("sin(x1) * exp(y1) + sqrt(y2)", 1, 2)
    p = EvalPoint((0.5,), (0.25, 4.0))
    expected = math.sin(0.5) * math.exp(0.25) + 2.0
    assert eval_expr(e, p) == pytest.approx(expected, rel=1e-15)


def test_parse_scientific_notation():
    e = parse_expr("1e-3 + 2.5E+2", 0, 0)
    assert eval_expr(e, EvalPoint((), ())) == pytest.approx(250.001)


def test_parse_negative_exponent():
    e = parse_expr("x1^-2", 1, 0)
    assert eval_expr(e, EvalPoint((2.0,), ())) == 0.25


def test_parse_error_carries_byte_offset():
    with pytest.raises(ParseError) as exc:
        parse_expr("x1 + ?", 1, 0)
    assert exc.value.offset == 5

    with pytest.raises(ParseError) as exc:
        parse_expr("x1 +", 1, 0)
    assert exc.value.offset == 4


def test_parse_unknown_and_out_of_range_variables():
    with pytest.raises(ParseError, match="unknown"):
        parse_expr("z1 + 1", 1, 1)
    with pytest.raises(ParseError, match="out of range"):
        parse_expr("x2", 1, 1)
    with pytest.raises(ParseError, match="out of range"):
        parse_expr("y1", 1, 0)
    with pytest.raises(ParseError, match="out of range"):
        parse_expr("x0", 1, 0)


def test_parse_fractional_exponent_rejected():
    with pytest.raises(ParseError, match="integer"):
        parse_expr("x1^2.5", 1, 0)


def test_parse_double_power_rejected():
    with pytest.raises(ParseError):
        parse_expr("x1^2^3", 1, 0)


# ---------------------------------------------------------------------------
# evaluation and domain errors


def test_eval_point_rejects_nonfinite():
    with pytest.raises(ValueError):
        EvalPoint((float("nan"),), ())
    with pytest.raises(ValueError):
        EvalPoint((), (float("inf"),))


def test_domain_error_names_subexpression():
    e = parse_expr("log(x1 - 1)", 1, 0)
    with pytest.raises(DomainError) as exc:
        eval_expr(e, EvalPoint((0.5,), ()))
    assert "log(x1 - 1.0)" in str(exc.value)

    e = parse_expr("1 / (x1 - 2)", 1, 0)
    with pytest.raises(DomainError, match="division by zero"):
        eval_expr(e, EvalPoint((2.0,), ()))

    e = parse_expr("sqrt(x1)", 1, 0)
    with pytest.raises(DomainError):
        eval_expr(e, EvalPoint((-1.0,), ()))

    e = parse_expr("x1^-1", 1, 0)
    with pytest.raises(DomainError, match="negative power"):
        eval_expr(e, EvalPoint((0.0,), ()))


def test_sqrt_value_ok_at_zero_but_not_differentiable():
    e = parse_expr("sqrt(x1)", 1, 0)
    assert eval_expr(e, EvalPoint((0.0,), ())) == 0.0
    with pytest.raises(DomainError, match="differentiable"):
        gradient(e, EvalPoint((0.0,), ()))


def test_eval_many_matches_pointwise():
    e = parse_expr("sin(x1) + x1 * y1 - y2^2", 1, 2)
    rng = np.random.default_rng(7)
    X = rng.normal(size=(50, 1))
    Y = rng.normal(size=(50, 2))
    vals = eval_many(e, X, Y)
    for i in range(50):
        assert vals[i] == pytest.approx(
            eval_expr(e, EvalPoint(tuple(X[i]), tuple(Y[i]))), rel=1e-14, abs=1e-14
        )


def test_eval_many_constant_broadcasts():
    e = parse_expr("3", 0, 1)
    vals = eval_many(e, np.zeros((4, 0)), np.ones((4, 1)))
    assert vals.shape == (4,)
    assert np.all(vals == 3.0)


# ---------------------------------------------------------------------------
# derivatives


def test_gradient_pinned_quadratic():
    e = parse_expr("(x1 - y1)^2", 1, 1)
    g = gradient(e, EvalPoint((0.0,), (-1.0,)))
    assert np.allclose(g, [2.0, -2.0], atol=1e-15)


def test_hessian_pinned_quadratic():
    e = parse_expr("0 - (x1 - y1)^2", 1, 1)
    H = hessian(e, EvalPoint((0.3,), (0.7,)))
    assert np.allclose(H, [[-2.0, 2.0], [2.0, -2.0]], atol=1e-14)


def test_hessian_exactly_symmetric():
    e = parse_expr("exp(x1 * y1) + sin(x2) * y1^3", 2, 1)
    H = hessian(e, EvalPoint((0.4, -1.2), (0.9,)))
    assert np.array_equal(H, H.T)


def test_gradient_matches_fd_on_random_points():
    # relative agreement within 1e-6 wherever the gradient norm is at
    # least 1e-3, over 1000 random point and expression pairings
    exprs = [
        parse_expr(s, 2, 2)
        for s in (
            "sin(x1) * cos(y1) + exp(0.3 * x2)",
            "(x1 - y1)^2 + (x2 - y2)^2",
            "x1 * y2 / (2 + x2^2)",
            "log(2 + x1^2 + y1^2) - sqrt(1 + y2^2)",
            "x1^3 - 2 * x1 * x2 * y1 + y2^4",
        )
    ]
    rng = np.random.default_rng(0)
    checked = 0
    for i in range(1000):
        e = exprs[i % len(exprs)]
        p = EvalPoint(tuple(rng.uniform(-2, 2, 2)), tuple(rng.uniform(-2, 2, 2)))
        g = gradient(e, p)
        nrm = np.linalg.norm(g)
        if nrm < 1e-3:
            continue
        fd = fd_gradient(e, p)
        assert np.linalg.norm(g - fd) <= 1e-6 * max(1.0, nrm), (i, p)
        checked += 1
    assert checked > 900


def test_second_derivatives_match_fd():
    e = parse_expr("exp(x1) * sin(y1) + x1^2 * y1", 1, 1)
    p = EvalPoint((0.3,), (0.8,))
    H = hessian(e, p)
    h = 1e-4
    for i in range(2):
        for j in range(2):
            def at(di, dj):
                q = [0.3, 0.8]
                q[i] += di
                q[j] += dj
                return eval_expr(e, EvalPoint((q[0],), (q[1],)))

            fd = (at(h, h) - at(h, -h) - at(-h, h) + at(-h, -h)) / (4 * h * h)
            assert H[i, j] == pytest.approx(fd, abs=1e-6)


def test_max_indices():
    e = parse_expr("x1 + y3 * x2", 2, 3)
    assert max_indices(e) == (2, 3)
    assert max_indices(Const(1.0)) == (0, 0)


# ---------------------------------------------------------------------------
# formatting round trips

_leaf = st.one_of(
    st.builds(Const, st.floats(min_value=-5, max_value=5, allow_nan=False).map(float)),
    st.builds(Var, st.just("x"), st.integers(1, 2)),
    st.builds(Var, st.just("y"), st.integers(1, 2)),
)


def _node(children):
    return st.one_of(
        st.builds(Binary, st.sampled_from(["add", "sub", "mul"]), children, children),
        st.builds(Unary, st.sampled_from(["neg", "sin", "cos", "exp"]), children),
        st.builds(Power, children, st.integers(0, 3)),
    )


_expr_trees = st.recursive(_leaf, _node, max_leaves=12)


@given(_expr_trees)
@settings(max_examples=200, deadline=None)
def test_format_parse_value_round_trip(e):
    text = format_expr(e)
    back = parse_expr(text, 2, 2)
    rng = np.random.default_rng(42)
    for _ in range(5):
        p = EvalPoint(tuple(rng.uniform(-2, 2, 2)), tuple(rng.uniform(-2, 2, 2)))
        a = eval_expr(e, p)
        b = eval_expr(back, p)
        assert a == pytest.approx(b, rel=1e-12, abs=1e-12)


@given(st.text(alphabet="xy123+-*/^() .", max_size=24))
@settings(max_examples=200, deadline=None)
def test_parser_never_crashes_unexpectedly(text):
    try:
        parse_expr(text, 2, 2)
    except ParseError:
        pass


def test_structural_round_trip_of_parsed_text():
    for text in (
        "(x1 - y1)^2",
        "0 - (x1 - y1)^2",
        "-x1^2 + y1 * (x1 - 3.5)",
        "sin(x1) * cos(y1) / (1 + x1^2)",
        "x1 / 2 / y1 - -y1",
    ):
        e = parse_expr(text, 1, 1)
        assert parse_expr(format_expr(e), 1, 1) == e
