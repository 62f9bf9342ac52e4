"""Closed-form scalar fields: parse, print, evaluate, differentiate.

The family is deliberately small. It is enough to express every type-change
function and multiplier coefficient used in the library, and it keeps every
field smooth away from the zero set of a ``PiecewiseSign`` switch.

Evaluation is vectorized over numpy arrays. ``PiecewiseSign`` evaluates each
branch only on the points where it is active, so a branch that is undefined on
the other side of the interface never raises spuriously.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import (
    DivisionByZero,
    EvaluationError,
    InvalidTypeChange,
    SigmaShapeViolation,
    ParseError,
    PiecewiseMismatch,
    UnknownIdentifier,
)

# Relative tolerance for branch agreement on a PiecewiseSign interface.
INTERFACE_RTOL = 1e-12


class Expr:
    """Base class. Nodes are immutable and hashable."""

    __slots__ = ()

    # building helpers, with constant folding only
    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return sub(self, as_expr(other))

    def __rsub__(self, other):
        return sub(as_expr(other), self)

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return div(self, as_expr(other))

    def __rtruediv__(self, other):
        return div(as_expr(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, n):
        if isinstance(n, (int, np.integer)):
            return power(self, int(n))
        return NotImplemented

    def __str__(self):
        return to_str(self)

    def __call__(self, x, y=None, interface="agree"):
        env = {"x": x} if y is None else {"x": x, "y": y}
        return evaluate(self, env, interface=interface)


@dataclass(frozen=True, slots=True)
class Const(Expr):
    value: float


@dataclass(frozen=True, slots=True)
class Var(Expr):
    name: str


@dataclass(frozen=True, slots=True)
class Add(Expr):
    lhs: Expr
    rhs: Expr


@dataclass(frozen=True, slots=True)
class Sub(Expr):
    lhs: Expr
    rhs: Expr


@dataclass(frozen=True, slots=True)
class Mul(Expr):
    lhs: Expr
    rhs: Expr


@dataclass(frozen=True, slots=True)
class Div(Expr):
    lhs: Expr
    rhs: Expr


@dataclass(frozen=True, slots=True)
class Pow(Expr):
    base: Expr
    exponent: int


@dataclass(frozen=True, slots=True)
class PowAbs(Expr):
    """|base|^p, or sign(base)*|base|^p when ``signed`` is set."""

    base: Expr
    p: float
    signed: bool = False


@dataclass(frozen=True, slots=True)
class Exp(Expr):
    arg: Expr


@dataclass(frozen=True, slots=True)
class Abs(Expr):
    arg: Expr


@dataclass(frozen=True, slots=True)
class Sign(Expr):
    arg: Expr


@dataclass(frozen=True, slots=True)
class PiecewiseSign(Expr):
    """``pos`` where switch > 0, ``neg`` where switch < 0."""

    switch: Expr
    pos: Expr
    neg: Expr


X = Var("x")
Y = Var("y")
S = Var("s")
ZERO = Const(0.0)
ONE = Const(1.0)


def as_expr(v) -> Expr:
    if isinstance(v, Expr):
        return v
    if isinstance(v, (int, float, np.integer, np.floating)):
        return Const(float(v))
    if isinstance(v, str):
        return parse_expr(v)
    raise TypeError(f"cannot convert {type(v).__name__} to Expr")


def _is_const(e, value=None):
    return isinstance(e, Const) and (value is None or e.value == value)


# ---------------------------------------------------------------- folding

def add(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value + b.value)
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    return Add(a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value - b.value)
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return neg(b)
    return Sub(a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value * b.value)
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    return Mul(a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 0.0):
        raise DivisionByZero("constant zero denominator")
    if _is_const(a) and _is_const(b):
        return Const(a.value / b.value)
    if _is_const(a, 0.0):
        return ZERO
    if _is_const(b, 1.0):
        return a
    return Div(a, b)


def neg(a: Expr) -> Expr:
    if _is_const(a):
        return Const(-a.value)
    return Mul(Const(-1.0), a)


def power(base: Expr, n: int) -> Expr:
    if n == 0:
        return ONE
    if n == 1:
        return base
    if _is_const(base) and (base.value != 0.0 or n > 0):
        return Const(base.value ** n)
    return Pow(base, n)


def exp(a) -> Expr:
    a = as_expr(a)
    if _is_const(a):
        return Const(float(np.exp(a.value)))
    return Exp(a)


def piecewise_sign(switch, pos, neg_) -> Expr:
    return PiecewiseSign(as_expr(switch), as_expr(pos), as_expr(neg_))


# ---------------------------------------------------------------- structure

def free_vars(e: Expr) -> set[str]:
    out: set[str] = set()
    stack = [e]
    while stack:
        n = stack.pop()
        if isinstance(n, Var):
            out.add(n.name)
        elif isinstance(n, (Add, Sub, Mul, Div)):
            stack += [n.lhs, n.rhs]
        elif isinstance(n, (Pow, PowAbs)):
            stack.append(n.base)
        elif isinstance(n, (Exp, Abs, Sign)):
            stack.append(n.arg)
        elif isinstance(n, PiecewiseSign):
            stack += [n.switch, n.pos, n.neg]
    return out


def has_piecewise(e: Expr) -> bool:
    stack = [e]
    while stack:
        n = stack.pop()
        if isinstance(n, PiecewiseSign):
            return True
        if isinstance(n, (Add, Sub, Mul, Div)):
            stack += [n.lhs, n.rhs]
        elif isinstance(n, (Pow, PowAbs)):
            stack.append(n.base)
        elif isinstance(n, (Exp, Abs, Sign)):
            stack.append(n.arg)
    return False


def branch(e: Expr, side: str) -> Expr:
    """Replace every PiecewiseSign by its ``pos`` or ``neg`` branch."""
    if isinstance(e, PiecewiseSign):
        return branch(e.pos if side == "pos" else e.neg, side)
    if isinstance(e, (Add, Sub, Mul, Div)):
        return type(e)(branch(e.lhs, side), branch(e.rhs, side))
    if isinstance(e, Pow):
        return Pow(branch(e.base, side), e.exponent)
    if isinstance(e, PowAbs):
        return PowAbs(branch(e.base, side), e.p, e.signed)
    if isinstance(e, (Exp, Abs, Sign)):
        return type(e)(branch(e.arg, side))
    return e


# ---------------------------------------------------------------- differentiation

def diff(e: Expr, v: str) -> Expr:
    """Exact symbolic derivative. PiecewiseSign differentiates branchwise."""
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == v else ZERO
    if isinstance(e, Add):
        return add(diff(e.lhs, v), diff(e.rhs, v))
    if isinstance(e, Sub):
        return sub(diff(e.lhs, v), diff(e.rhs, v))
    if isinstance(e, Mul):
        return add(mul(diff(e.lhs, v), e.rhs), mul(e.lhs, diff(e.rhs, v)))
    if isinstance(e, Div):
        da, db = diff(e.lhs, v), diff(e.rhs, v)
        if _is_const(db, 0.0):
            return div(da, e.rhs)
        return div(sub(mul(da, e.rhs), mul(e.lhs, db)), power(e.rhs, 2))
    if isinstance(e, Pow):
        db = diff(e.base, v)
        if _is_const(db, 0.0):
            return ZERO
        return mul(mul(Const(float(e.exponent)), power(e.base, e.exponent - 1)), db)
    if isinstance(e, PowAbs):
        db = diff(e.base, v)
        if _is_const(db, 0.0):
            return ZERO
        # d|b|^p = p sign(b)|b|^(p-1) db ; d sign(b)|b|^p = p |b|^(p-1) db
        inner = Const(1.0) if e.p == 1.0 else PowAbs(e.base, e.p - 1.0, not e.signed)
        if e.p == 1.0 and not e.signed:
            inner = Sign(e.base)
        return mul(mul(Const(e.p), inner), db)
    if isinstance(e, Exp):
        return mul(e, diff(e.arg, v))
    if isinstance(e, Abs):
        return mul(Sign(e.arg), diff(e.arg, v))
    if isinstance(e, Sign):
        return ZERO
    if isinstance(e, PiecewiseSign):
        dp, dn = diff(e.pos, v), diff(e.neg, v)
        if dp == dn:
            return dp
        return PiecewiseSign(e.switch, dp, dn)
    raise TypeError(f"unknown node {type(e).__name__}")


def grad(e: Expr) -> tuple[Expr, Expr]:
    return diff(e, "x"), diff(e, "y")


# ---------------------------------------------------------------- evaluation

def evaluate(e: Expr, env: Mapping[str, object], interface: str = "agree", strict: bool = True):
    """Evaluate on scalars or arrays.

    ``interface`` decides what happens where a PiecewiseSign switch is exactly
    zero: ``"agree"`` requires both branches to coincide there, ``"pos"`` or
    ``"neg"`` picks that branch.

    With ``strict=False`` poles and overflow give nan/inf instead of raising.
    """
    if interface not in ("agree", "pos", "neg"):
        raise ValueError(f"bad interface policy {interface!r}")
    flat, n = _flatten(env)
    if not strict:
        with np.errstate(all="ignore"):
            return _finish(_ev(e, flat, n, (interface, False)), env)
    out = _ev(e, flat, n, (interface, True))
    if not np.all(np.isfinite(out)):
        i = int(np.flatnonzero(~np.isfinite(out))[0])
        raise EvaluationError("non-finite value", _point(flat, i))
    return _finish(out, env)


def _shape(env):
    shapes = [np.shape(v) for v in env.values()]
    return np.broadcast_shapes(*shapes) if shapes else ()


def _flatten(env):
    shape = _shape(env)
    flat = {k: np.broadcast_to(np.asarray(v, dtype=float), shape).ravel() for k, v in env.items()}
    return flat, int(np.prod(shape)) if shape else 1


def _finish(out, env):
    shape = _shape(env)
    return out.reshape(shape) if shape else float(out[0])


def eval_at(e: Expr, x: float, y: float, interface: str = "agree") -> float:
    return float(evaluate(e, {"x": x, "y": y}, interface=interface))


def _point(env, i):
    return (float(env["x"][i]) if "x" in env else float("nan"),
            float(env["y"][i]) if "y" in env else float("nan"))


def _subset(env, mask):
    return {k: a[mask] for k, a in env.items()}


def _ev(e, env, n, ctx):
    interface, strict = ctx
    if isinstance(e, Const):
        return np.full(n, e.value)
    if isinstance(e, Var):
        try:
            return env[e.name].astype(float, copy=True)
        except KeyError:
            raise EvaluationError(f"variable {e.name!r} is not bound") from None
    if isinstance(e, Add):
        return _ev(e.lhs, env, n, ctx) + _ev(e.rhs, env, n, ctx)
    if isinstance(e, Sub):
        return _ev(e.lhs, env, n, ctx) - _ev(e.rhs, env, n, ctx)
    if isinstance(e, Mul):
        return _ev(e.lhs, env, n, ctx) * _ev(e.rhs, env, n, ctx)
    if isinstance(e, Div):
        num = _ev(e.lhs, env, n, ctx)
        den = _ev(e.rhs, env, n, ctx)
        bad = den == 0.0
        if strict and bad.any():
            raise DivisionByZero("zero denominator", _point(env, int(np.flatnonzero(bad)[0])))
        return num / den
    if isinstance(e, Pow):
        b = _ev(e.base, env, n, ctx)
        if e.exponent >= 0:
            return b ** e.exponent
        bad = b == 0.0
        if strict and bad.any():
            raise DivisionByZero("negative power of zero", _point(env, int(np.flatnonzero(bad)[0])))
        return 1.0 / b ** (-e.exponent)
    if isinstance(e, PowAbs):
        b = _ev(e.base, env, n, ctx)
        a = np.abs(b)
        if e.p < 0:
            bad = a == 0.0
            if strict and bad.any():
                raise DivisionByZero("negative power of zero", _point(env, int(np.flatnonzero(bad)[0])))
        with np.errstate(divide="ignore", invalid="ignore"):
            out = a ** e.p
        return np.sign(b) * out if e.signed else out
    if isinstance(e, Exp):
        with np.errstate(over="ignore"):
            return np.exp(_ev(e.arg, env, n, ctx))
    if isinstance(e, Abs):
        return np.abs(_ev(e.arg, env, n, ctx))
    if isinstance(e, Sign):
        return np.sign(_ev(e.arg, env, n, ctx))
    if isinstance(e, PiecewiseSign):
        sw = _ev(e.switch, env, n, ctx)
        out = np.empty(n)
        pos, negm, zero = sw > 0, sw < 0, sw == 0
        if pos.any():
            out[pos] = _ev(e.pos, _subset(env, pos), int(pos.sum()), ctx)
        if negm.any():
            out[negm] = _ev(e.neg, _subset(env, negm), int(negm.sum()), ctx)
        if zero.any():
            sub_env, m = _subset(env, zero), int(zero.sum())
            if interface == "pos":
                out[zero] = _ev(e.pos, sub_env, m, ctx)
            elif interface == "neg":
                out[zero] = _ev(e.neg, sub_env, m, ctx)
            else:
                p = _ev(e.pos, sub_env, m, ctx)
                q = _ev(e.neg, sub_env, m, ctx)
                scale = np.maximum(1.0, np.maximum(np.abs(p), np.abs(q)))
                bad = np.abs(p - q) > INTERFACE_RTOL * scale
                if strict and bad.any():
                    i = int(np.flatnonzero(bad)[0])
                    raise PiecewiseMismatch(
                        f"branches differ on the interface ({p[i]!r} vs {q[i]!r})",
                        _point(sub_env, i),
                    )
                out[zero] = p
        return out
    raise TypeError(f"unknown node {type(e).__name__}")


# ---------------------------------------------------------------- printing

_PREC = {Add: 1, Sub: 1, Mul: 2, Div: 2, Pow: 4}
_OPS = {Add: "+", Sub: "-", Mul: "*", Div: "/"}


def _fmt_number(v: float) -> str:
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        s = str(int(v))
    else:
        s = repr(v)
    return f"({s})" if v < 0 or s.startswith("-") else s


def _prec(e):
    if isinstance(e, Const) and e.value < 0:
        return 5  # printed parenthesized
    return _PREC.get(type(e), 5)


def to_str(e: Expr) -> str:
    """Print in the grammar accepted by parse_expr; the tree round-trips exactly."""
    if isinstance(e, Const):
        return _fmt_number(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, (Add, Sub, Mul, Div)):
        p = _PREC[type(e)]
        left = to_str(e.lhs)
        if _prec(e.lhs) < p:
            left = f"({left})"
        right = to_str(e.rhs)
        if _prec(e.rhs) <= p:
            right = f"({right})"
        return f"{left} {_OPS[type(e)]} {right}"
    if isinstance(e, Pow):
        base = to_str(e.base)
        if _prec(e.base) <= 4:
            base = f"({base})"
        ex = str(e.exponent) if e.exponent >= 0 else f"({e.exponent})"
        return f"{base}^{ex}"
    if isinstance(e, PowAbs):
        name = "spowabs" if e.signed else "powabs"
        return f"{name}({to_str(e.base)}; {repr(float(e.p))})"
    if isinstance(e, Exp):
        return f"exp({to_str(e.arg)})"
    if isinstance(e, Abs):
        return f"abs({to_str(e.arg)})"
    if isinstance(e, Sign):
        return f"sign({to_str(e.arg)})"
    if isinstance(e, PiecewiseSign):
        return f"piecewise_sign({to_str(e.switch)}; {to_str(e.pos)}; {to_str(e.neg)})"
    raise TypeError(f"unknown node {type(e).__name__}")


# ---------------------------------------------------------------- parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^();]))"
)
_FUNCS = {"exp": 1, "abs": 1, "sqrt": 1, "sign": 1, "powabs": 2, "spowabs": 2, "piecewise_sign": 3}


class _Parser:
    def __init__(self, text: str, variables: Iterable[str]):
        self.text = text
        self.variables = frozenset(variables)
        self.tokens = []  # (kind, value, byte offset)
        pos = 0
        while True:
            while pos < len(text) and text[pos].isspace():
                pos += 1
            if pos >= len(text):
                break
            m = _TOKEN.match(text, pos)
            if m is None or m.end() == pos:
                raise ParseError(f"unexpected character {text[pos]!r}", self._byte(pos))
            kind = m.lastgroup
            start = m.start(kind)
            self.tokens.append((kind, m.group(kind), self._byte(start)))
            pos = m.end()
        self.tokens.append(("end", "", self._byte(len(text))))
        self.i = 0

    def _byte(self, idx):
        return len(self.text[:idx].encode("utf-8"))

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, val, off = self.take()
        if val != value or kind != "op":
            raise ParseError(f"expected {value!r}, found {val or 'end of input'!r}", off)

    def parse(self):
        e = self.expr()
        kind, val, off = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {val!r}", off)
        return e

    def expr(self):
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            r = self.term()
            e = Add(e, r) if op == "+" else Sub(e, r)
        return e

    def term(self):
        e = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            r = self.unary()
            e = Mul(e, r) if op == "*" else Div(e, r)
        return e

    def unary(self):
        kind, val, _ = self.peek()
        if kind == "op" and val in ("-", "+"):
            self.take()
            inner = self.unary()
            if val == "+":
                return inner
            return Const(-inner.value) if isinstance(inner, Const) else Mul(Const(-1.0), inner)
        return self.power()

    def power(self):
        base = self.primary()
        if self.peek()[1] == "^" and self.peek()[0] == "op":
            self.take()
            return Pow(base, self.int_exponent())
        return base

    def int_exponent(self):
        paren = False
        if self.peek()[1] == "(":
            self.take()
            paren = True
        sign = 1
        if self.peek()[1] == "-" and self.peek()[0] == "op":
            self.take()
            sign = -1
        kind, val, off = self.take()
        if kind != "num" or not val.isdigit():
            raise ParseError("exponent after '^' must be an integer literal (use powabs for real powers)", off)
        if paren:
            self.expect(")")
        return sign * int(val)

    def number(self):
        kind, val, off = self.take()
        return Const(float(val))

    def primary(self):
        kind, val, off = self.peek()
        if kind == "num":
            return self.number()
        if kind == "op" and val == "(":
            self.take()
            e = self.expr()
            self.expect(")")
            return e
        if kind == "name":
            self.take()
            if val in _FUNCS:
                return self.call(val, off)
            if val in self.variables:
                return Var(val)
            raise UnknownIdentifier(val, off)
        raise ParseError(f"unexpected {val or 'end of input'!r}", off)

    def call(self, name, off):
        self.expect("(")
        args = [self.expr()]
        while self.peek()[1] == ";":
            self.take()
            args.append(self.expr())
        self.expect(")")
        if len(args) != _FUNCS[name]:
            raise ParseError(f"{name} takes {_FUNCS[name]} argument(s), got {len(args)}", off)
        if name == "exp":
            return Exp(args[0])
        if name == "abs":
            return Abs(args[0])
        if name == "sign":
            return Sign(args[0])
        if name == "sqrt":
            return PowAbs(args[0], 0.5)
        if name in ("powabs", "spowabs"):
            p = args[1]
            if not isinstance(p, Const):
                raise ParseError(f"the exponent of {name} must be a numeric literal", off)
            return PowAbs(args[0], p.value, name == "spowabs")
        return PiecewiseSign(*args)


def parse_expr(text: str, variables: Iterable[str] = ("x", "y")) -> Expr:
    """Parse the expression grammar. Errors carry the byte offset."""
    return _Parser(text, variables).parse()


# ---------------------------------------------------------------- type change

@dataclass(frozen=True)
class TypeChangeSpec:
    """A type-change function K with its first derivatives.

    Build one with the classmethods; they validate the variant's structure.
    """

    variant: str
    params: tuple
    K: Expr

    @property
    def Kx(self) -> Expr:
        return diff(self.K, "x")

    @property
    def Ky(self) -> Expr:
        return diff(self.K, "y")

    @property
    def Kxx(self) -> Expr:
        return diff(self.Kx, "x")

    @classmethod
    def cold_plasma(cls) -> "TypeChangeSpec":
        return cls("ColdPlasma", (), X - Y ** 2)

    @classmethod
    def cibrario(cls, k: int) -> "TypeChangeSpec":
        if int(k) != k or k < 1:
            raise InvalidTypeChange(f"k must be a positive integer, got {k}")
        return cls("Cibrario", (("k", int(k)),), X ** (2 * int(k) + 1))

    @classmethod
    def keldysh_power(cls, n: float) -> "TypeChangeSpec":
        if not n > 3:
            raise InvalidTypeChange(f"need n > 3 for three continuous derivatives, got {n}")
        return cls("KeldyshPower", (("n", float(n)),), PowAbs(X, float(n), signed=True))

    @classmethod
    def general_x(cls, K) -> "TypeChangeSpec":
        K = as_expr(K)
        if free_vars(K) - {"x"}:
            raise InvalidTypeChange("K must depend on x only")
        xs = np.linspace(-1.0, 1.0, 201)
        if abs(eval_at(K, 0.0, 0.0)) > 1e-14:
            raise InvalidTypeChange("K(0) must vanish")
        vals = evaluate(K, {"x": xs})
        if np.any(xs * vals < 0):
            raise InvalidTypeChange("need x K(x) >= 0 (elliptic for x > 0)")
        return cls("GeneralX", (), K)

    @classmethod
    def sigma_form(cls, sigma, y_range: float = 2.0, samples: int = 401) -> "TypeChangeSpec":
        sigma = as_expr(sigma)
        if free_vars(sigma) - {"y"}:
            raise InvalidTypeChange("sigma must depend on y only")
        ys = np.linspace(-y_range, y_range, samples)
        s = evaluate(sigma, {"y": ys}) * np.ones_like(ys)
        ds = evaluate(diff(sigma, "y"), {"y": ys}) * np.ones_like(ys)
        if abs(eval_at(sigma, 0.0, 0.0)) > 1e-14 or abs(eval_at(diff(sigma, "y"), 0.0, 0.0)) > 1e-14:
            raise SigmaShapeViolation("need sigma(0) = sigma'(0) = 0")
        if np.any(s < 0):
            raise SigmaShapeViolation("sigma must be nonnegative")
        if np.any(ds[ys > 0] <= 0) or np.any(ds[ys < 0] >= 0):
            raise SigmaShapeViolation("need sigma' > 0 for y > 0 and sigma' < 0 for y < 0")
        return cls("SigmaForm", (("sigma", to_str(sigma)),), X - sigma)

    def describe(self) -> dict:
        return {"variant": self.variant, **dict(self.params), "K": to_str(self.K)}
