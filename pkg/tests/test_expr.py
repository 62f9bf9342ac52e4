import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from coldplasma import expr as E
from coldplasma.errors import (
    DivisionByZero,
    EvaluationError,
    InvalidTypeChange,
    ParseError,
    PiecewiseMismatch,
    SigmaShapeViolation,
    UnknownIdentifier,
)
from coldplasma.expr import TypeChangeSpec, X, Y, diff, eval_at, evaluate, parse_expr, to_str

from conftest import sx, sy, sympy_eval, to_sympy


# ---------------------------------------------------------------- strategies

consts = st.floats(min_value=-3.0, max_value=3.0, allow_nan=False, allow_infinity=False).map(E.Const)
leaves = st.one_of(consts, st.sampled_from([X, Y]))


def _smooth(children):
    bin_ = st.tuples(children, children)
    return st.one_of(
        bin_.map(lambda t: E.Add(*t)),
        bin_.map(lambda t: E.Sub(*t)),
        bin_.map(lambda t: E.Mul(*t)),
        # denominator bounded away from zero
        bin_.map(lambda t: E.Div(t[0], E.Add(E.Const(2.0), E.Pow(t[1], 2)))),
        st.tuples(children, st.integers(0, 3)).map(lambda t: E.Pow(*t)),
        children.map(lambda c: E.Exp(E.Mul(E.Const(0.1), c))),
    )


smooth_exprs = st.recursive(leaves, _smooth, max_leaves=8)


def _any(children):
    return st.one_of(
        _smooth(children),
        st.tuples(children, st.integers(-3, 3)).map(lambda t: E.Pow(*t)),
        st.tuples(children, st.floats(0.5, 4.0), st.booleans()).map(lambda t: E.PowAbs(*t)),
        children.map(E.Abs),
        children.map(E.Sign),
        st.tuples(children, children, children).map(lambda t: E.PiecewiseSign(*t)),
    )


any_exprs = st.recursive(leaves, _any, max_leaves=10)
points = st.tuples(st.floats(-1.0, 1.0), st.floats(-1.0, 1.0))


# ---------------------------------------------------------------- parsing

def test_parse_cold_plasma_type_change():
    assert parse_expr("x - y^2") == E.Sub(E.Var("x"), E.Pow(E.Var("y"), 2))


def test_parse_exponential_of_scaled_type_change():
    e = parse_expr("exp(2*0.1*(x - y^2)/1.5)")
    assert isinstance(e, E.Exp)
    assert eval_at(e, 0.5, 0.5) == pytest.approx(np.exp(0.2 * 0.25 / 1.5), rel=1e-15)


def test_parse_piecewise_branches_agree_on_sonic_curve(rng):
    e = parse_expr("piecewise_sign(x - y^2; 0.5*(x-y^2); -0.5*(x-y^2))")
    assert isinstance(e, E.PiecewiseSign)
    ys = rng.uniform(-2, 2, 100)
    xs = ys ** 2
    pos = evaluate(e.pos, {"x": xs, "y": ys})
    neg = evaluate(e.neg, {"x": xs, "y": ys})
    assert np.max(np.abs(pos - neg)) == 0.0
    assert np.all(evaluate(e, {"x": xs, "y": ys}) == 0.0)


def test_parse_functions_and_precedence():
    e = parse_expr("-x^2 + 2*y/4 - sqrt(abs(x))*sign(y)")
    x, y = 0.7, -1.3
    assert eval_at(e, x, y) == pytest.approx(-(x ** 2) + 2 * y / 4 - np.sqrt(abs(x)) * np.sign(y))


def test_parse_negative_integer_exponent():
    assert eval_at(parse_expr("x^(-2)"), 2.0, 0.0) == 0.25


def test_parse_powabs_and_signed_power():
    assert eval_at(parse_expr("powabs(x; 2.5)"), -4.0, 0.0) == pytest.approx(32.0)
    assert eval_at(parse_expr("spowabs(x; 2.5)"), -4.0, 0.0) == pytest.approx(-32.0)


def test_parse_error_reports_byte_offset():
    with pytest.raises(ParseError) as info:
        parse_expr("x + * y")
    assert info.value.offset == 4


def test_parse_error_offset_counts_bytes_not_characters():
    # a no-break space is two bytes in UTF-8
    with pytest.raises(UnknownIdentifier) as info:
        parse_expr("x\u00a0+ z")
    assert info.value.offset == 5
    assert info.value.name == "z"


def test_unknown_identifier():
    with pytest.raises(UnknownIdentifier) as info:
        parse_expr("x + t")
    assert info.value.offset == 4


def test_variables_are_configurable():
    e = parse_expr("s^2 + 1", ("s",))
    assert evaluate(e, {"s": 3.0}) == 10.0
    with pytest.raises(UnknownIdentifier):
        parse_expr("x", ("s",))


@pytest.mark.parametrize("text", ["x^2.5", "x^y", "(x", "x)", "exp(x; y)", "powabs(x; y)", "", "3 x"])
def test_malformed_input_rejected(text):
    with pytest.raises(ParseError):
        parse_expr(text)


# ---------------------------------------------------------------- evaluation

def test_eval_examples():
    K = parse_expr("x - y^2")
    assert eval_at(K, 1.0, 0.0) == 1.0
    assert eval_at(K, 0.25, 0.5) == 0.0
    assert eval_at(TypeChangeSpec.cibrario(1).K, -0.5, 3.0) == -0.125


def test_eval_vectorized_and_scalar_agree(rng):
    e = parse_expr("exp(x)*y - x^3/(1 + y^2)")
    xs, ys = rng.uniform(-1, 1, 20), rng.uniform(-1, 1, 20)
    vec = evaluate(e, {"x": xs, "y": ys})
    assert vec.shape == (20,)
    for i in range(20):
        assert vec[i] == eval_at(e, xs[i], ys[i])


def test_division_by_zero_carries_point():
    with pytest.raises(DivisionByZero) as info:
        evaluate(parse_expr("1/x"), {"x": np.array([1.0, 0.0]), "y": np.array([0.0, 2.0])})
    assert info.value.point == (0.0, 2.0)


def test_negative_power_of_zero():
    with pytest.raises(DivisionByZero):
        eval_at(parse_expr("x^(-1)"), 0.0, 0.0)
    with pytest.raises(DivisionByZero):
        eval_at(parse_expr("powabs(x; -0.5)"), 0.0, 0.0)


def test_non_strict_evaluation_returns_non_finite():
    v = evaluate(parse_expr("1/x"), {"x": np.array([0.0, 2.0])}, strict=False)
    assert np.isinf(v[0]) and v[1] == 0.5


def test_overflow_raises_in_strict_mode():
    with pytest.raises(EvaluationError):
        eval_at(parse_expr("exp(1000*x)"), 1.0, 0.0)


def test_constant_zero_denominator_rejected_at_construction():
    with pytest.raises(DivisionByZero):
        X / 0


def test_piecewise_interface_policies():
    e = parse_expr("piecewise_sign(x; 1; 2)")
    assert eval_at(e, 1.0, 0.0) == 1.0
    assert eval_at(e, -1.0, 0.0) == 2.0
    with pytest.raises(PiecewiseMismatch):
        eval_at(e, 0.0, 0.0)
    assert eval_at(e, 0.0, 0.0, interface="pos") == 1.0
    assert eval_at(e, 0.0, 0.0, interface="neg") == 2.0


def test_piecewise_branch_only_evaluated_where_active():
    # the negative branch has a pole at x = 1, which lies on the positive side
    e = parse_expr("piecewise_sign(x; x; 1/(x - 1))")
    assert eval_at(e, 1.0, 0.0) == 1.0


def test_unbound_variable():
    with pytest.raises(EvaluationError):
        evaluate(X + Y, {"x": 1.0})


# ---------------------------------------------------------------- differentiation

def test_diff_examples():
    assert diff(parse_expr("x - y^2"), "x") == E.ONE
    d = diff(TypeChangeSpec.cibrario(2).K, "x")
    for x in (-1.3, 0.2, 0.9):
        assert eval_at(d, x, 0.0) == pytest.approx(5 * x ** 4, rel=1e-14)


def test_diff_of_exponential_matches_finite_differences(rng):
    delta, Q1 = 0.1, 2.0
    K = parse_expr("x - y^2")
    e = E.exp(E.Const(2 * delta / Q1) * K)
    d = diff(e, "y")
    xs, ys = rng.uniform(-1, 1, 50), rng.uniform(-1, 1, 50)
    h = 1e-5
    fd = (evaluate(e, {"x": xs, "y": ys + h}) - evaluate(e, {"x": xs, "y": ys - h})) / (2 * h)
    exact = evaluate(d, {"x": xs, "y": ys})
    closed = -2 * ys * (0.2 / 2) * np.exp(0.1 * (xs - ys ** 2))
    assert np.max(np.abs(fd - exact) / np.abs(exact)) <= 1e-6
    assert np.allclose(exact, closed, rtol=1e-14, atol=0)


def test_diff_piecewise_is_branchwise():
    e = parse_expr("piecewise_sign(x; x^2; 3*x)")
    d = diff(e, "x")
    assert isinstance(d, E.PiecewiseSign)
    assert eval_at(d, 0.5, 0.0) == 1.0
    assert eval_at(d, -0.5, 0.0) == 3.0


def test_diff_powabs_matches_sympy():
    for signed in (False, True):
        e = E.PowAbs(X * Y - E.Const(0.3), 2.5, signed)
        for v, sv in (("x", sx), ("y", sy)):
            got = diff(e, v)
            want = sp.diff(to_sympy(e), sv)
            for x, y in ((0.9, 0.8), (-0.4, 1.1), (0.2, 0.1)):
                assert eval_at(got, x, y) == pytest.approx(float(want.subs({sx: x, sy: y})), rel=1e-12)


@settings(max_examples=150, deadline=None)
@given(smooth_exprs, st.sampled_from(["x", "y"]))
def test_diff_matches_sympy_oracle(e, v):
    xs = np.array([-0.83, -0.21, 0.37, 0.64, 0.95])
    ys = np.array([0.71, -0.58, 0.12, -0.94, 0.33])
    got = evaluate(diff(e, v), {"x": xs, "y": ys}) * np.ones_like(xs)
    want = sympy_eval(sp.diff(to_sympy(e), sx if v == "x" else sy), xs, ys)
    assert np.allclose(got, want, rtol=1e-9, atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(smooth_exprs, smooth_exprs, consts)
def test_diff_is_linear(f, g, c):
    lhs = diff(f + c * g, "x")
    rhs = diff(f, "x") + c * diff(g, "x")
    xs = np.linspace(-0.9, 0.9, 7)
    ys = np.linspace(0.8, -0.7, 7)
    assert np.allclose(evaluate(lhs, {"x": xs, "y": ys}) * np.ones(7),
                       evaluate(rhs, {"x": xs, "y": ys}) * np.ones(7), rtol=1e-10, atol=1e-10)


@settings(max_examples=100, deadline=None)
@given(smooth_exprs)
def test_mixed_partials_commute(e):
    xs = np.linspace(-0.9, 0.9, 7)
    ys = np.linspace(0.8, -0.7, 7)
    a = evaluate(diff(diff(e, "x"), "y"), {"x": xs, "y": ys}) * np.ones(7)
    b = evaluate(diff(diff(e, "y"), "x"), {"x": xs, "y": ys}) * np.ones(7)
    assert np.allclose(a, b, rtol=1e-10, atol=1e-10)


# ---------------------------------------------------------------- printing

@settings(max_examples=300, deadline=None)
@given(any_exprs)
def test_print_parse_round_trip_is_exact(e):
    assert parse_expr(to_str(e)) == e


@settings(max_examples=100, deadline=None)
@given(smooth_exprs, points)
def test_round_trip_preserves_values(e, p):
    assert eval_at(parse_expr(to_str(e)), *p) == eval_at(e, *p)


def test_printing_is_readable():
    assert to_str(parse_expr("x - y^2")) == "x - y^2"
    assert to_str(parse_expr("x - (y - 1)")) == "x - (y - 1)"
    assert to_str(parse_expr("(x*y)^3")) == "(x * y)^3"


def test_branch_and_has_piecewise():
    e = parse_expr("1 + piecewise_sign(x; 2; 3)")
    assert E.has_piecewise(e)
    assert E.branch(e, "pos") == parse_expr("1 + 2")
    assert not E.has_piecewise(E.branch(e, "neg"))


# ---------------------------------------------------------------- type change

def test_type_change_variants():
    cp = TypeChangeSpec.cold_plasma()
    assert to_str(cp.K) == "x - y^2"
    assert eval_at(cp.Ky, 0.0, 0.5) == -1.0
    assert eval_at(TypeChangeSpec.keldysh_power(4.5).K, -2.0, 0.0) == pytest.approx(-(2.0 ** 4.5))
    assert eval_at(TypeChangeSpec.general_x("x^3").Kxx, 2.0, 0.0) == 12.0
    s = TypeChangeSpec.sigma_form(parse_expr("y^4", ("y",)))
    assert eval_at(s.K, 1.0, 1.0) == 0.0
    assert s.describe()["variant"] == "SigmaForm"


@pytest.mark.parametrize("make", [
    lambda: TypeChangeSpec.cibrario(0),
    lambda: TypeChangeSpec.cibrario(1.5),
    lambda: TypeChangeSpec.keldysh_power(3.0),
    lambda: TypeChangeSpec.general_x(parse_expr("x*y")),
    lambda: TypeChangeSpec.general_x(parse_expr("x + 1")),
    lambda: TypeChangeSpec.general_x(parse_expr("-x")),
])
def test_invalid_type_changes(make):
    with pytest.raises(InvalidTypeChange):
        make()


@pytest.mark.parametrize("sigma", ["y^3", "y^2 + 1", "y", "-y^2", "y^2 - y^4"])
def test_sigma_shape_violations(sigma):
    with pytest.raises(SigmaShapeViolation):
        TypeChangeSpec.sigma_form(parse_expr(sigma, ("y",)))
