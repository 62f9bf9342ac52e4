import numpy as np
import pytest
import sympy as sp

from coldplasma import expr as E

sx, sy = sp.symbols("x y", real=True)


def to_sympy(e, side=None):
    """Convert an Expr to sympy. Piecewise nodes need ``side`` ('pos' or 'neg')."""
    rec = lambda t: to_sympy(t, side)  # noqa: E731
    if isinstance(e, E.Const):
        v = float(e.value)
        return sp.Integer(int(v)) if v.is_integer() else sp.Float(v, 17)
    if isinstance(e, E.Var):
        return {"x": sx, "y": sy}[e.name]
    if isinstance(e, E.Add):
        return rec(e.lhs) + rec(e.rhs)
    if isinstance(e, E.Sub):
        return rec(e.lhs) - rec(e.rhs)
    if isinstance(e, E.Mul):
        return rec(e.lhs) * rec(e.rhs)
    if isinstance(e, E.Div):
        return rec(e.lhs) / rec(e.rhs)
    if isinstance(e, E.Pow):
        return rec(e.base) ** e.exponent
    if isinstance(e, E.PowAbs):
        b = rec(e.base)
        out = sp.Abs(b) ** sp.Float(e.p, 17)
        return sp.sign(b) * out if e.signed else out
    if isinstance(e, E.Exp):
        return sp.exp(rec(e.arg))
    if isinstance(e, E.Abs):
        return sp.Abs(rec(e.arg))
    if isinstance(e, E.Sign):
        return sp.sign(rec(e.arg))
    if isinstance(e, E.PiecewiseSign):
        if side is None:
            raise ValueError("piecewise node needs a side")
        return rec(e.pos if side == "pos" else e.neg)
    raise TypeError(type(e))


def sympy_eval(s, xs, ys):
    f = sp.lambdify((sx, sy), s, "numpy")
    return np.asarray(f(xs, ys), dtype=float) * np.ones_like(xs)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# ---------------------------------------------------------------- acceptance summary

ACCEPTANCE: dict = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
