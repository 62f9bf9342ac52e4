"""Multiplier families for second-order operators K v_xx + v_yy + k1 v_x + k2 v and
for the first-order cold-plasma system, their quadratic-form coefficients, and
discrete checks of the resulting identities and lower bounds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from .errors import (
    ConstraintViolated,
    DegenerateTestFunction,
    DomainError,
    HypothesisViolated,
    Nonconvergence,
    SupportViolation,
    UnknownFamily,
    UnsupportedMultiplierShape,
)
from .expr import (
    ONE,
    ZERO,
    Abs,
    Add,
    Const,
    Div,
    Exp,
    Expr,
    Mul,
    PiecewiseSign,
    Pow,
    PowAbs,
    Sign,
    Sub,
    TypeChangeSpec,
    X,
    Y,
    as_expr,
    branch,
    diff,
    evaluate,
    exp,
    parse_expr,
    piecewise_sign,
    to_str,
)
from .friedrichs import (
    FirstOrderSystem,
    assemble_adjoint_system,
    assemble_system,
    mat,
    mat_add,
    mat_diff,
    mat_eval,
    mat_mul,
    mat_scale,
    mat_sub,
    mat_sym,
    mat_T,
)
from .geometry import Domain, domain_samples
from .grid import DiscreteField, Grid, d0x, d0y, dxx, dyy, positive_fraction
from .kernels import form_margin

PAIRINGS = ("prop12", "hl", "inside", "outside")


# ---------------------------------------------------------------- operators

@dataclass(frozen=True)
class SecondOrderOperator:
    """L v = K v_xx + v_yy + kappa1 v_x + kappa2 v."""

    K: TypeChangeSpec
    kappa1: Expr = ZERO
    kappa2: Expr = ZERO

    def __post_init__(self):
        object.__setattr__(self, "kappa1", as_expr(self.kappa1))
        object.__setattr__(self, "kappa2", as_expr(self.kappa2))

    def apply(self, v) -> Expr:
        v = as_expr(v)
        vx = diff(v, "x")
        return self.K.K * diff(vx, "x") + diff(diff(v, "y"), "y") + self.kappa1 * vx + self.kappa2 * v

    def describe(self) -> dict:
        return {"K": to_str(self.K.K), "kappa1": to_str(self.kappa1), "kappa2": to_str(self.kappa2)}


def adjoint(L: SecondOrderOperator) -> SecondOrderOperator:
    """Formal adjoint: kappa1* = 2 K_x - kappa1, kappa2* = K_xx - (kappa1)_x + kappa2."""
    return SecondOrderOperator(
        L.K,
        2.0 * L.K.Kx - L.kappa1,
        L.K.Kxx - diff(L.kappa1, "x") + L.kappa2,
    )


# ---------------------------------------------------------------- multipliers

@dataclass(frozen=True)
class MultiplierTriple:
    """H v = a v + b v_x + c v_y, or the matrix [[b, c], [-K c, b]] for first-order pairings.

    ``pairing`` selects the identity: ``prop12`` is (v, L H v), ``hl`` is
    (H v, L v), ``inside`` is (Psi, L M Psi) and ``outside`` is (M w, L w).
    """

    a: Expr
    b: Expr
    c: Expr
    family: str
    params: dict
    operator: object
    pairing: str
    weights: tuple
    derived: dict = field(default_factory=dict)

    @property
    def K(self) -> TypeChangeSpec:
        return self.operator.K

    @property
    def matrix(self):
        return mat(self.b, self.c, -(self.K.K * self.c), self.b)

    def scaled(self, factor: float) -> "MultiplierTriple":
        f = Const(float(factor))
        return replace(self, a=f * self.a, b=f * self.b, c=f * self.c,
                       params={**self.params, "scale": self.params.get("scale", 1.0) * factor})

    def describe(self) -> dict:
        out = {
            "family": self.family,
            "pairing": self.pairing,
            "a": to_str(self.a),
            "b": to_str(self.b),
            "c": to_str(self.c),
            "params": dict(sorted(self.params.items())),
            "derived": dict(sorted(self.derived.items())),
            "weights": [to_str(w) for w in self.weights],
        }
        if isinstance(self.operator, SecondOrderOperator):
            out["operator"] = self.operator.describe()
        else:
            out["operator"] = self.operator.describe()
        return out


@dataclass(frozen=True)
class QuadraticFormCoeffs:
    omega: Expr
    alpha: Expr
    beta: Expr
    gamma: Expr
    boundary: str
    pairing: str
    weights: tuple

    def describe(self) -> dict:
        return {
            "omega": to_str(self.omega),
            "alpha": to_str(self.alpha),
            "beta": to_str(self.beta),
            "gamma": to_str(self.gamma),
            "boundary": self.boundary,
            "pairing": self.pairing,
        }


def _abs_K(K: TypeChangeSpec) -> Expr:
    return Abs(K.K)


# ---------------------------------------------------------------- hypothesis checks

def _check_zero(e: Expr, what: str, samples) -> None:
    for side in ("pos", "neg"):
        v = evaluate(branch(e, side), {"x": samples[0], "y": samples[1]}, strict=False)
        v = np.asarray(v) * np.ones_like(samples[0])
        finite = np.isfinite(v)
        if finite.any() and np.max(np.abs(v[finite])) > 1e-10:
            i = int(np.argmax(np.where(finite, np.abs(v), 0.0)))
            raise HypothesisViolated(
                f"{what} must vanish ({side} branch is {v[i]:.3g} at ({samples[0][i]:.4g}, {samples[1][i]:.4g}))")


def _hypothesis_samples(seed: int = 12345, n: int = 200):
    rng = np.random.default_rng(seed)
    return rng.uniform(-2.0, 2.0, n), rng.uniform(-2.0, 2.0, n)


def _constant_a(H_a: Expr, samples) -> None:
    _check_zero(diff(H_a, "x"), "a_x", samples)
    _check_zero(diff(H_a, "y"), "a_y", samples)


# ---------------------------------------------------------------- coefficients

def coeffs_prop12(L: SecondOrderOperator, H: MultiplierTriple) -> QuadraticFormCoeffs:
    """Coefficients of (v, L H v) = int omega v^2 + alpha v_x^2 + 2 beta v_x v_y + gamma v_y^2
    for compactly supported v.

    Requires, per piece, a constant, b_xx = b_xy = 0 and c linear.
    """
    a, b, c = H.a, H.b, H.c
    s = _hypothesis_samples()
    _constant_a(a, s)
    for e, name in ((diff(diff(b, "x"), "x"), "b_xx"), (diff(diff(b, "x"), "y"), "b_xy"),
                    (diff(diff(c, "x"), "x"), "c_xx"), (diff(diff(c, "x"), "y"), "c_xy"),
                    (diff(diff(c, "y"), "y"), "c_yy")):
        _check_zero(e, name, s)
    K, Kx, Ky, Kxx = L.K.K, L.K.Kx, L.K.Ky, L.K.Kxx
    k1, k2 = L.kappa1, L.kappa2
    k1x = diff(k1, "x")
    bx, by, cx, cy = diff(b, "x"), diff(b, "y"), diff(c, "x"), diff(c, "y")
    P = Kxx - k1x + k2
    omega = 0.5 * ((Kxx - k1x + 2.0 * k2) * a - diff(P * b, "x") - diff(P * c, "y"))
    alpha = (0.5 * (cy - bx) - a) * K + (1.5 * Kx - k1) * b + 0.5 * c * Ky
    beta = 0.5 * ((Kx - k1) * c - (cx * K + by))
    gamma = 0.5 * (bx - cy) - a
    return QuadraticFormCoeffs(omega, alpha, beta, gamma,
                               "1/2 (K v_x^2 + v_y^2)(c dx - b dy)", "prop12", H.weights)


def coeffs_hl(L: SecondOrderOperator, H: MultiplierTriple) -> QuadraticFormCoeffs:
    """Coefficients of (H v, L v) for compactly supported v; a must be constant."""
    a, b, c = H.a, H.b, H.c
    _constant_a(a, _hypothesis_samples())
    K, Kxx = L.K.K, L.K.Kxx
    k1, k2 = L.kappa1, L.kappa2
    omega = 0.5 * a * Kxx - 0.5 * a * diff(k1, "x") + a * k2 - 0.5 * diff(b * k2, "x") - 0.5 * diff(c * k2, "y")
    alpha = -(a * K) - 0.5 * diff(b * K, "x") + b * k1 + 0.5 * diff(c * K, "y")
    beta = 0.5 * (-diff(b, "y") - diff(c * K, "x") + c * k1)
    gamma = -a + 0.5 * diff(b, "x") - 0.5 * diff(c, "y")
    return QuadraticFormCoeffs(omega, alpha, beta, gamma,
                               "a, b, c boundary terms of (Hv, Lv)", "hl", H.weights)


def _symmetric_on_samples(M, samples) -> bool:
    V = mat_eval(M, {"x": samples[0], "y": samples[1]})
    V = np.where(np.isfinite(V), V, 0.0)
    return bool(np.max(np.abs(V[0, 1] - V[1, 0])) <= 1e-10 * max(1.0, float(np.max(np.abs(V)))))


def coeffs_first_order(system: FirstOrderSystem, M, pairing: str = "inside",
                       weights=None) -> QuadraticFormCoeffs:
    """Coefficients of the quadratic form for a matrix multiplier M.

    ``inside``: (Psi, L M Psi) needs A1 M and A2 M symmetric.
    ``outside``: (M w, L w) needs M^T A1 and M^T A2 symmetric.
    """
    s = _hypothesis_samples()
    if pairing == "inside":
        P1, P2 = mat_mul(system.A1, M), mat_mul(system.A2, M)
        if not (_symmetric_on_samples(P1, s) and _symmetric_on_samples(P2, s)):
            raise UnsupportedMultiplierShape("A1 M and A2 M must be symmetric")
        core = mat_add(mat_add(mat_mul(system.A1, mat_diff(M, "x")), mat_mul(system.A2, mat_diff(M, "y"))),
                       mat_mul(system.B, M))
        Q = mat_sub(mat_sym(core), mat_scale(0.5, mat_add(mat_diff(P1, "x"), mat_diff(P2, "y"))))
        boundary = "1/2 Psi^T (A1 M) Psi dy - 1/2 Psi^T (A2 M) Psi dx"
    elif pairing == "outside":
        MT = mat_T(M)
        P1, P2 = mat_mul(MT, system.A1), mat_mul(MT, system.A2)
        if not (_symmetric_on_samples(P1, s) and _symmetric_on_samples(P2, s)):
            raise UnsupportedMultiplierShape("M^T A1 and M^T A2 must be symmetric")
        Q = mat_sub(mat_sym(mat_mul(MT, system.B)), mat_scale(0.5, mat_add(mat_diff(P1, "x"), mat_diff(P2, "y"))))
        boundary = "1/2 w^T (M^T A1) w dy - 1/2 w^T (M^T A2) w dx"
    else:
        raise ValueError(f"first-order pairing must be 'inside' or 'outside', got {pairing!r}")
    if weights is None:
        weights = (_abs_K(system.K), ONE)
    return QuadraticFormCoeffs(ZERO, Q[0][0], 0.5 * (Q[0][1] + Q[1][0]), Q[1][1], boundary, pairing, weights)


def coeffs(H: MultiplierTriple) -> QuadraticFormCoeffs:
    if H.pairing == "prop12":
        return coeffs_prop12(H.operator, H)
    if H.pairing == "hl":
        return coeffs_hl(H.operator, H)
    return coeffs_first_order(H.operator, H.matrix, H.pairing, H.weights)


# ---------------------------------------------------------------- families

FAMILIES = ("exp_switch", "linear_switch", "matrix_first_order", "dilation", "odd_power",
            "negative_kappa", "matrix_adjoint", "obstruction", "explicit")


def _samples(domain: Domain, density: float = 128.0):
    return domain_samples(domain, density)


def _eval(e, xs, ys, interface="neg"):
    return evaluate(as_expr(e), {"x": xs, "y": ys}, interface=interface) * np.ones_like(xs)


def _require_positive(name: str, values, xs, ys, detail: str = ""):
    bad = ~(values > 0)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise ConstraintViolated(name, (float(xs[i]), float(ys[i])), detail or f"value {values[i]:.6g}")


def _require(name: str, ok: bool, detail: str = ""):
    if not ok:
        raise ConstraintViolated(name, None, detail)


def _get(params, key, default=None):
    v = params.get(key, default)
    return None if v is None else float(v)


def _positivity_margin(H: MultiplierTriple, domain: Domain, density: float = 64.0) -> float:
    cert = check_positivity(coeffs(H), domain, 0.0, density)
    return cert.delta_eff


def _exp_switch(params, domain):
    kappa = _get(params, "kappa", 1.0)
    _require("kappa in [1,2]", 1.0 <= kappa <= 2.0, f"kappa = {kappa}")
    K = TypeChangeSpec.cold_plasma()
    xs, ys = _samples(domain)
    k = _eval(K.K, xs, ys)
    mu1 = float(k[k >= 0].max()) if (k >= 0).any() else 0.0
    mu2 = float(k[k <= 0].min()) if (k <= 0).any() else 0.0
    Q2 = math.exp(mu2)
    ymax2 = float(np.max(ys ** 2))
    L = SecondOrderOperator(K, kappa, 0.0)

    def build(delta):
        Q1 = math.exp(2 * delta * mu1)
        b = piecewise_sign(K.K, exp(Const(2 * delta / Q1) * K.K), exp(Const(6 * delta / Q2) * K.K))
        c = Const(2 * (2 * delta - 1)) * Y
        derived = {"Q1": Q1, "Q2": Q2, "mu1": mu1, "mu2": mu2}
        return MultiplierTriple(Const(-1.0), b, c, "exp_switch", {"kappa": kappa, "delta": delta}, L, "hl",
                                (_abs_K(K), ONE), derived)

    delta = _get(params, "delta")
    if delta is None:
        delta = 0.5 * min(Q2 / 6, Q2 / (8 * max(ymax2, 1e-300)), 0.25)
        for _ in range(20):
            if _positivity_margin(build(delta), domain) > 0:
                break
            delta /= 2
        auto = True
    else:
        auto = False
    _require("6delta<Q2", 6 * delta < Q2, f"6 delta = {6 * delta:.6g}, Q2 = {Q2:.6g}")
    H = build(delta)
    pos, neg = k > 0, k < 0
    bv = _eval(H.b, xs, ys)
    Q1 = H.derived["Q1"]
    if pos.any():
        _require_positive("b<=Q1", Q1 - bv[pos] + 1e-12 * Q1, xs[pos], ys[pos])
    if neg.any():
        _require_positive("b>Q2", bv[neg] - Q2, xs[neg], ys[neg])
    return replace(H, derived={**H.derived, "delta_auto": auto})


def _linear_switch(params, domain):
    kappa = _get(params, "kappa", 0.0)
    _require("kappa in [0,1)", 0.0 <= kappa < 1.0, f"kappa = {kappa}")
    dt = _get(params, "delta_tilde", 0.1)
    lo, hi = (1 + dt) / (3 - kappa), (1 - dt) / (kappa + 1)
    _require("range", lo < hi, f"empty interval ({lo:.6g}, {hi:.6g})")
    N = _get(params, "N")
    auto = N is None
    if auto:
        N = 0.5 * (lo + hi)
    _require("range", lo < N < hi, f"N = {N} outside ({lo:.6g}, {hi:.6g})")
    K = TypeChangeSpec.cold_plasma()
    b = piecewise_sign(K.K, Const(-N) * K.K, Const(N) * K.K)
    c = Const(-4 * N) * Y
    return MultiplierTriple(Const(-1.0), b, c, "linear_switch",
                            {"kappa": kappa, "delta_tilde": dt, "N": N},
                            SecondOrderOperator(K, kappa, 0.0), "hl", (_abs_K(K), ONE),
                            {"N_lower": lo, "N_upper": hi, "N_auto": auto})


def _matrix_first_order(params, domain):
    mu = _get(params, "mu", 1.0)
    delta = _get(params, "delta", 0.2)
    _require("mu>0", mu > 0, f"mu = {mu}")
    _require("0<delta<mu", 0 < delta < mu, f"delta = {delta}, mu = {mu}")
    K = TypeChangeSpec.cold_plasma()
    xs, ys = _samples(domain)
    t = _get(params, "t")
    if t is None:
        t = 2 * mu * float(np.max(np.abs(ys)))
    _require_positive("mu*y-t<0", t - mu * ys, xs, ys)
    eps = (mu - delta) / 8
    threshold = 2 * float(np.max((np.abs(delta * ys) + t) ** 2 / eps - ys * (mu * ys - t)))
    s = _get(params, "s")
    auto = s is None
    if auto:
        s = 2 * max(threshold, 0.0)
    m = piecewise_sign(K.K, Const((mu + delta) / 2), Const((mu - delta) / 2))
    b = m * K.K + Const(s)
    c = Const(mu) * Y - Const(t)
    k = _eval(K.K, xs, ys)
    bv, cv = _eval(b, xs, ys), _eval(c, xs, ys)
    _require_positive("2cy+s>0", 2 * cv * ys + s, xs, ys)
    _require_positive("mK+s>0", bv, xs, ys)
    _require_positive("b^2+Kc^2>0", bv ** 2 + k * cv ** 2, xs, ys)
    sys = assemble_system(K, 1.0, 0.0)
    return MultiplierTriple(ZERO, b, c, "matrix_first_order", {"mu": mu, "delta": delta, "t": t, "s": s},
                            sys, "inside", (_abs_K(K), ONE),
                            {"epsilon": eps, "s_threshold": threshold, "s_auto": auto})


def _check_x_nonnegative(domain, xs, ys):
    bad = xs < -1e-12
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise ConstraintViolated("x>=0", (float(xs[i]), float(ys[i])), "the domain must lie in x >= 0")


def _dilation(params, domain):
    m = _get(params, "m", 8.0)
    mu = _get(params, "mu", 1.0)
    _require("mu>0", mu > 0, f"mu = {mu}")
    _require("m>3mu", m > 3 * mu, f"m = {m}, mu = {mu}")
    delta = _get(params, "delta")
    auto = delta is None
    if auto:
        delta = 0.5 * min(m / 2 - mu, (m - 2 * mu) / 2, (m - 3 * mu) / 2)
    M = (m - 3 * mu) / 2 - delta
    _require("M>0", M > 0, f"M = {M}")
    xs, ys = _samples(domain)
    _check_x_nonnegative(domain, xs, ys)
    K = TypeChangeSpec.cold_plasma()
    return MultiplierTriple(Const(-M), Const(m) * X, Const(mu) * Y, "dilation",
                            {"m": m, "mu": mu, "delta": delta}, SecondOrderOperator(K, 1.0, 0.0), "prop12",
                            (Y ** 2, ONE), {"M": M, "delta_auto": auto})


def _odd_power(params, domain):
    k = int(_get(params, "k", 1))
    c1 = _get(params, "c1", 0.0)
    mu = _get(params, "mu", 1.0)
    delta = _get(params, "delta", 0.1)
    _require("mu>0", mu > 0, f"mu = {mu}")
    _require("delta>0", delta > 0, f"delta = {delta}")
    ell = k + 1 - c1
    _require("ell>0", ell > 0, f"ell = k + 1 - c1 = {ell}")
    K = TypeChangeSpec.cibrario(k)
    xs, ys = _samples(domain)
    ymax = float(np.max(np.abs(ys)))
    xpow = float(np.max(np.abs(xs) ** (2 * k - 1)))
    coef = abs(c1 - 2 * k - 1) * mu * ymax
    eps = delta / (2 * coef) if coef > 0 else 1.0
    T = xpow / eps + (0.5 - 1 / (4 * ell)) * mu + delta / (2 * ell)
    a = _get(params, "a")
    a_auto = a is None
    if a_auto:
        a = -2 * T / (1 + 1 / (2 * ell))
    _require("a<0", a < 0, f"a = {a}")
    m_pos = (-a + mu / 2 - delta) / ell
    m_neg = (-a + mu / 2 + delta) / ell
    _require("m>0", m_pos > 0 and m_neg > 0, f"m = ({m_pos}, {m_neg})")
    base = SecondOrderOperator(K, Const(c1) * X ** (2 * k), 0.0)
    m = piecewise_sign(K.K, Const(m_pos), Const(m_neg))
    b, c = m * X, Const(mu) * Y
    omega0 = k * (2 * k + 1 - c1) * a * xs ** (2 * k - 1)
    mv = np.where(_eval(K.K, xs, ys) > 0, m_pos, m_neg)
    denom = np.abs(a - mv / 2 - mu / 2)
    c2_star = float(np.min(omega0 / denom))
    c2 = _get(params, "c2")
    c2_auto = c2 is None
    if c2_auto:
        c2 = 2 * c2_star if c2_star < 0 else -1.0
    L = adjoint(replace(base, kappa2=Const(c2)))
    return MultiplierTriple(Const(a), b, c, "odd_power",
                            {"k": k, "c1": c1, "c2": c2, "mu": mu, "delta": delta, "a": a},
                            L, "prop12", (_abs_K(K), ONE),
                            {"ell": ell, "epsilon": eps, "a_threshold": -T / (1 + 1 / (2 * ell)),
                             "c2_threshold": c2_star, "m_pos": m_pos, "m_neg": m_neg,
                             "a_auto": a_auto, "c2_auto": c2_auto})


def _negative_kappa(params, domain):
    kappa = _get(params, "kappa", -9.0)
    delta = _get(params, "delta", 0.1)
    _require("kappa<0", kappa < 0, f"kappa = {kappa}")
    _require("delta>0", delta > 0, f"delta = {delta}")
    K = TypeChangeSpec.cold_plasma()
    p = 2 * delta / (1 - kappa)
    a = p * (2.5 - 2 * kappa) + delta * kappa
    m = piecewise_sign(K.K, Const(delta), Const(-delta))
    b = Const(2 * p) * X + m * K.K
    c = Const(p) * Y
    return MultiplierTriple(Const(a), b, c, "negative_kappa", {"kappa": kappa, "delta": delta},
                            SecondOrderOperator(K, kappa, 0.0), "prop12", (_abs_K(K), ONE), {"p": p, "a": a})


def _matrix_adjoint(params, domain):
    sigma = params.get("sigma", "y^2")
    sigma_e = parse_expr(sigma, ("y",)) if isinstance(sigma, str) else as_expr(sigma)
    kappa1 = _get(params, "kappa1", 1.0)
    t = _get(params, "t", 2.0)
    _require("kappa1>1/2", kappa1 > 0.5, f"kappa1 = {kappa1}")
    _require("t>1", t > 1, f"t = {t}")
    K = TypeChangeSpec.sigma_form(sigma_e)
    xs, ys = _samples(domain)
    sig = _eval(sigma_e, xs, ys)
    dsig = _eval(diff(sigma_e, "y"), xs, ys)
    alpha0 = (kappa1 - t / 2) * xs + (t - 1) / 2 * sig + t * ys / 2 * dsig
    beta = kappa1 * t * ys / 2
    gamma = (t - 1) / 2
    threshold = float(np.max((beta ** 2 / (gamma / 2) - alpha0) / (kappa1 - 0.5)))
    m = _get(params, "m")
    auto = m is None
    if auto:
        m = 2 * threshold if threshold > 0 else 1.0
    b = -(Const(m) + X)
    c = Const(-t) * Y
    k = _eval(K.K, xs, ys)
    bv, cv = _eval(b, xs, ys), _eval(c, xs, ys)
    _require_positive("det M>0", bv ** 2 + k * cv ** 2, xs, ys)
    sys = assemble_adjoint_system(K, kappa1)
    return MultiplierTriple(ZERO, b, c, "matrix_adjoint",
                            {"sigma": to_str(sigma_e), "kappa1": kappa1, "t": t, "m": m},
                            sys, "outside", (ONE, ONE), {"m_threshold": threshold, "m_auto": auto})


def _obstruction(params, domain):
    Kx = params.get("K", "x")
    Ke = parse_expr(Kx, ("x",)) if isinstance(Kx, str) else as_expr(Kx)
    K = TypeChangeSpec.general_x(Ke)
    a = _get(params, "a", -5.0)
    mu = _get(params, "mu", 1.0)
    m = _get(params, "m", 1.0)
    L = SecondOrderOperator(K, K.Kx, 0.0)
    return MultiplierTriple(Const(a), Const(m) * X, Const(mu) * Y, "obstruction",
                            {"K": to_str(Ke), "a": a, "mu": mu, "m": m}, L, "prop12", (_abs_K(K), ONE))


def _explicit(params, domain):
    pairing = params.get("pairing", "prop12")
    if pairing not in PAIRINGS:
        raise ConstraintViolated("pairing", None, f"unknown pairing {pairing!r}")
    K = params.get("K_spec")
    if K is None:
        K = TypeChangeSpec.cold_plasma()
    k1, k2 = params.get("kappa1", 0.0), params.get("kappa2", 0.0)

    def ex(v):
        return parse_expr(v) if isinstance(v, str) else as_expr(v)

    a, b, c = ex(params.get("a", 0.0)), ex(params.get("b", 0.0)), ex(params.get("c", 0.0))
    k1, k2 = ex(k1), ex(k2)
    if pairing in ("prop12", "hl"):
        op = SecondOrderOperator(K, k1, k2)
    elif pairing == "inside":
        op = assemble_system(K, k1, k2)
    else:
        op = assemble_adjoint_system(K, k1)
    w = (ONE, ONE) if pairing == "outside" else (_abs_K(K), ONE)
    echo = {kk: (to_str(ex(v)) if kk in ("a", "b", "c", "kappa1", "kappa2") else v)
            for kk, v in params.items() if kk != "K_spec"}
    return MultiplierTriple(a, b, c, "explicit", echo, op, pairing, w)


_BUILDERS = {
    "exp_switch": _exp_switch,
    "linear_switch": _linear_switch,
    "matrix_first_order": _matrix_first_order,
    "dilation": _dilation,
    "odd_power": _odd_power,
    "negative_kappa": _negative_kappa,
    "matrix_adjoint": _matrix_adjoint,
    "obstruction": _obstruction,
    "explicit": _explicit,
}


def builtin_family(name: str, params: Mapping | None, domain: Domain) -> MultiplierTriple:
    """Build a named multiplier family on a domain.

    Parameters left out are constructed from sampled domain extrema at twice
    the binding threshold; the chosen values are in ``params`` and the
    thresholds in ``derived``.
    """
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise UnknownFamily(f"unknown family {name!r}; choose from {', '.join(FAMILIES)}") from None
    return builder(dict(params or {}), domain)


# ---------------------------------------------------------------- positivity

@dataclass
class PositivityCertificate:
    certified: bool
    delta: float
    delta_eff: float
    worst_point: tuple
    omega_min: float
    omega_worst_point: tuple
    samples: int
    violations: np.ndarray = field(repr=False)

    @property
    def margin(self) -> float:
        """Largest d with the form bounded below by d times the weights at every sample."""
        return self.delta_eff

    def to_dict(self) -> dict:
        return {
            "certified": self.certified,
            "delta": self.delta,
            "delta_eff": self.delta_eff,
            "worst_point": list(self.worst_point),
            "omega_min": self.omega_min,
            "omega_worst_point": list(self.omega_worst_point),
            "samples": self.samples,
            "violation_count": int(len(self.violations)),
        }

    def write_violations(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("x,y,margin\n")
            for x, y, m in self.violations:
                fh.write(f"{x!r},{y!r},{m!r}\n")


def check_positivity(cf: QuadraticFormCoeffs, domain: Domain, delta: float,
                     density: float = 512.0, tol: float = 1e-12) -> PositivityCertificate:
    """Sample alpha xi^2 + 2 beta xi eta + gamma eta^2 >= delta (w1 xi^2 + w2 eta^2) and omega >= 0."""
    xs, ys = domain_samples(domain, density)
    env = {"x": xs, "y": ys}
    vals = [evaluate(e, env, interface="neg") * np.ones_like(xs)
            for e in (cf.alpha, cf.beta, cf.gamma, cf.omega, cf.weights[0], cf.weights[1])]
    al, be, ga, om, w1, w2 = vals
    d = form_margin(al, be, ga, w1, w2)
    i = int(np.argmin(d))
    j = int(np.argmin(om))
    delta_eff = float(d[i])
    bad_form = d < delta - tol
    bad_omega = om < -tol
    viol = []
    if bad_form.any():
        viol.append(np.column_stack([xs[bad_form], ys[bad_form], d[bad_form] - delta]))
    if bad_omega.any():
        viol.append(np.column_stack([xs[bad_omega], ys[bad_omega], om[bad_omega]]))
    viol = np.vstack(viol) if viol else np.zeros((0, 3))
    certified = bool(delta_eff >= delta - tol and float(om[j]) >= -tol)
    return PositivityCertificate(certified, float(delta), delta_eff, (float(xs[i]), float(ys[i])),
                                 float(om[j]), (float(xs[j]), float(ys[j])), len(xs), viol)


# ---------------------------------------------------------------- quadrature

def _switches(e: Expr, out: dict) -> dict:
    if isinstance(e, PiecewiseSign):
        out[to_str(e.switch)] = e.switch
        for sub in (e.switch, e.pos, e.neg):
            _switches(sub, out)
    elif isinstance(e, (Add, Sub, Mul, Div)):
        _switches(e.lhs, out)
        _switches(e.rhs, out)
    elif isinstance(e, (Pow, PowAbs)):
        _switches(e.base, out)
    elif isinstance(e, (Exp, Abs, Sign)):
        _switches(e.arg, out)
    return out


def _operator_exprs(op) -> list:
    if isinstance(op, SecondOrderOperator):
        return [op.K.K, op.kappa1, op.kappa2]
    return [e for M in (op.A1, op.A2, op.B) for row in M for e in row]


class PairingQuadrature:
    """Midpoint quadrature of both sides of a multiplier identity on one grid.

    Coefficients are evaluated once per grid for both smooth branches; cells
    cut by the interface mix the two branch integrands by the cell's positive
    area fraction.
    """

    def __init__(self, H: MultiplierTriple, domain: Domain, h: float, L=None, cf=None):
        self.H = H
        self.L = L if L is not None else H.operator
        self.domain = domain
        self.h = h
        self.cf = cf if cf is not None else coeffs(replace(H, operator=self.L))
        self.grid = Grid.covering(domain.bbox(), h, pad=4)
        X_, Y_ = self.grid.centers()
        self.X, self.Y = X_, Y_
        self.mask = domain.contains(X_, Y_)
        exprs = [H.a, H.b, H.c, self.cf.omega, self.cf.alpha, self.cf.beta, self.cf.gamma,
                 *self.cf.weights, *_operator_exprs(self.L)]
        sw = {}
        for e in exprs:
            _switches(as_expr(e), sw)
        if len(sw) > 1:
            raise HypothesisViolated(f"coefficients switch on several interfaces: {sorted(sw)}")
        self.switch = next(iter(sw.values())) if sw else None
        self.theta = positive_fraction(self.switch, X_, Y_, h) if self.switch is not None else None
        self.sides = ("pos", "neg") if self.switch is not None else ("pos",)
        self._cache = {}

    def coef(self, e, side):
        key = (id(e), side)
        if key not in self._cache:
            v = evaluate(branch(as_expr(e), side), {"x": self.X, "y": self.Y}, strict=False)
            v = np.asarray(v, dtype=float) * np.ones_like(self.X)
            self._cache[key] = (np.where(np.isfinite(v), v, 0.0), e)
        return self._cache[key][0]

    def combine(self, per_side) -> float:
        if self.theta is None:
            total = per_side["pos"]
        else:
            total = self.theta * per_side["pos"] + (1.0 - self.theta) * per_side["neg"]
        return float(self.h * self.h * np.sum(total))

    def sample(self, v) -> np.ndarray:
        arr = evaluate(as_expr(v), {"x": self.X, "y": self.Y}, interface="neg", strict=False)
        arr = np.asarray(arr, dtype=float) * np.ones_like(self.X)
        return np.where(self.mask & np.isfinite(arr), arr, 0.0)

    def check_support(self, v, n: int = 512) -> None:
        """v and its gradient must vanish on the boundary (relative to max |v|)."""
        pts, _, _ = self.domain.boundary(n)
        comps = v if isinstance(v, tuple) else (v,)
        for comp in comps:
            comp = as_expr(comp)
            scale = float(np.max(np.abs(self.sample(comp)))) if comp is not ZERO else 0.0
            if scale == 0.0:
                continue
            for e, what in ((comp, "v"), (diff(comp, "x"), "v_x"), (diff(comp, "y"), "v_y")):
                val = np.abs(evaluate(e, {"x": pts[:, 0], "y": pts[:, 1]}, interface="neg", strict=False)
                             * np.ones(len(pts)))
                val = np.where(np.isfinite(val), val, np.inf)
                if val.max() > 1e-10 * scale:
                    i = int(np.argmax(val))
                    raise SupportViolation(f"{what} = {val[i]:.3g} on the boundary at "
                                           f"({pts[i, 0]:.6g}, {pts[i, 1]:.6g}); the test function "
                                           "must be supported in the interior")

    # scalar pairings --------------------------------------------------
    def _L_apply(self, W, side, Wx=None):
        h = self.h
        L = self.L
        Wx = d0x(W, h) if Wx is None else Wx
        return (self.coef(L.K.K, side) * dxx(W, h) + dyy(W, h)
                + self.coef(L.kappa1, side) * Wx + self.coef(L.kappa2, side) * W)

    def sides_scalar(self, V):
        h = self.h
        Vx, Vy = d0x(V, h), d0y(V, h)
        lhs, rhs = {}, {}
        cf = self.cf
        for side in self.sides:
            a, b, c = (self.coef(e, side) for e in (self.H.a, self.H.b, self.H.c))
            HV = a * V + b * Vx + c * Vy
            if self.H.pairing == "prop12":
                lhs[side] = V * self._L_apply(HV, side)
            else:
                lhs[side] = HV * self._L_apply(V, side, Vx)
            om, al, be, ga = (self.coef(e, side) for e in (cf.omega, cf.alpha, cf.beta, cf.gamma))
            rhs[side] = om * V * V + al * Vx * Vx + 2 * be * Vx * Vy + ga * Vy * Vy
        return self.combine(lhs), self.combine(rhs)

    # vector pairings --------------------------------------------------
    def _sys_apply(self, W, side):
        h = self.h
        S = self.L
        Wx = (d0x(W[0], h), d0x(W[1], h))
        Wy = (d0y(W[0], h), d0y(W[1], h))
        out = []
        for i in range(2):
            acc = 0.0
            for j in range(2):
                acc = acc + self.coef(S.A1[i][j], side) * Wx[j] + self.coef(S.A2[i][j], side) * Wy[j] \
                    + self.coef(S.B[i][j], side) * W[j]
            out.append(acc)
        return out

    def sides_vector(self, P):
        M = self.H.matrix
        lhs, rhs = {}, {}
        cf = self.cf
        for side in self.sides:
            Mv = [[self.coef(M[i][j], side) for j in range(2)] for i in range(2)]
            MP = [Mv[0][0] * P[0] + Mv[0][1] * P[1], Mv[1][0] * P[0] + Mv[1][1] * P[1]]
            if self.H.pairing == "inside":
                LMP = self._sys_apply(MP, side)
                lhs[side] = P[0] * LMP[0] + P[1] * LMP[1]
            else:
                LP = self._sys_apply(P, side)
                lhs[side] = MP[0] * LP[0] + MP[1] * LP[1]
            al, be, ga = (self.coef(e, side) for e in (cf.alpha, cf.beta, cf.gamma))
            rhs[side] = al * P[0] ** 2 + 2 * be * P[0] * P[1] + ga * P[1] ** 2
        return self.combine(lhs), self.combine(rhs)

    def evaluate_sides(self, v):
        if self.H.pairing in ("prop12", "hl"):
            return self.sides_scalar(self.sample(v))
        return self.sides_vector((self.sample(v[0]), self.sample(v[1])))

    def energy(self, v) -> float:
        """int w1 v_x^2 + w2 v_y^2 (scalar) or int w1 v1^2 + w2 v2^2 (vector), weights of the family."""
        w1 = self.coef(self.cf.weights[0], "pos")
        w2 = self.coef(self.cf.weights[1], "pos")
        if self.H.pairing in ("prop12", "hl"):
            V = self.sample(v)
            e = w1 * d0x(V, self.h) ** 2 + w2 * d0y(V, self.h) ** 2
        else:
            e = w1 * self.sample(v[0]) ** 2 + w2 * self.sample(v[1]) ** 2
        return float(self.h * self.h * np.sum(e))

    def operator_norm2(self, v) -> float:
        """||L v||^2 for a scalar v (used for the constant in ||v||_H <= C ||L v||)."""
        V = self.sample(v)
        per = {side: self._L_apply(V, side) ** 2 for side in self.sides}
        return self.combine(per)


@dataclass
class IdentityReport:
    hs: list
    lhs: list
    rhs: list
    abs_gap: list
    rel_gap: list
    orders: list
    fitted_order: float

    def to_dict(self):
        return {"h": self.hs, "lhs": self.lhs, "rhs": self.rhs, "abs_gap": self.abs_gap,
                "rel_gap": self.rel_gap, "pairwise_order": self.orders, "fitted_order": self.fitted_order}


def _orders(hs, gaps):
    out = []
    for i in range(len(gaps) - 1):
        if gaps[i] > 0 and gaps[i + 1] > 0:
            out.append(float(math.log(gaps[i] / gaps[i + 1]) / math.log(hs[i] / hs[i + 1])))
        else:
            out.append(math.inf if gaps[i + 1] == 0 else math.nan)
    return out


def _fit(hs, gaps):
    hs, gaps = np.asarray(hs, dtype=float), np.asarray(gaps, dtype=float)
    if len(hs) < 2 or np.any(gaps <= 0):
        return math.nan
    return float(np.polyfit(np.log(hs), np.log(gaps), 1)[0])


def verify_identity(L, H: MultiplierTriple, v, domain: Domain, hs: Sequence[float]) -> IdentityReport:
    """Both sides of the multiplier identity by midpoint quadrature with centered differences.

    ``v`` is an Expr (a pair for first-order pairings) supported in the
    interior; ``L`` defaults to the family's operator.
    """
    lhs, rhs, ag, rg = [], [], [], []
    for k, h in enumerate(hs):
        q = PairingQuadrature(H, domain, h, L)
        if k == 0:
            q.check_support(v)
        left, right = q.evaluate_sides(v)
        gap = abs(left - right)
        lhs.append(left)
        rhs.append(right)
        ag.append(gap)
        rg.append(0.0 if gap == 0.0 else gap / max(abs(left), abs(right)))
    return IdentityReport(list(hs), lhs, rhs, ag, rg, _orders(hs, rg), _fit(hs, rg))


# ---------------------------------------------------------------- test functions

@dataclass(frozen=True)
class Bump:
    """prod over axes of ((1 - ((t - center) / width)^2)_+)^4."""

    center: tuple
    width: tuple

    @property
    def expr(self) -> Expr:
        out = ONE
        for var, c0, w in ((X, self.center[0], self.width[0]), (Y, self.center[1], self.width[1])):
            s = ONE - ((var - Const(c0)) / Const(w)) ** 2
            out = out * (0.5 * (s + Abs(s))) ** 4
        return out

    def to_dict(self):
        return {"center": list(self.center), "width": list(self.width)}


def fixed_bump(x0: float = 1.0, y0: float = 1.0) -> Expr:
    """(x (x0 - x) y (y0 - y))^4 normalized to peak 1; zero on the rectangle [0, x0] x [0, y0] edges."""
    peak = (x0 * x0 / 4 * y0 * y0 / 4) ** 4
    return Const(1.0 / peak) * (X * (Const(x0) - X) * Y * (Const(y0) - Y)) ** 4


def _rect_inside(domain: Domain, cx, cy, wx, wy, n: int = 16) -> bool:
    t = np.linspace(-1.0, 1.0, n)
    xs = np.concatenate([cx + wx * t, cx + wx * t, np.full(n, cx - wx), np.full(n, cx + wx)])
    ys = np.concatenate([np.full(n, cy - wy), np.full(n, cy + wy), cy + wy * t, cy + wy * t])
    tol = 0.0
    return bool(np.all(domain.contains(xs, ys, tol)) and not np.any(domain.classify(xs, ys, 1e-12) == 2))


def random_bump(domain: Domain, rng: np.random.Generator, h: float, max_tries: int = 2000) -> Bump:
    """A bump whose support rectangle lies in the open domain, with half-widths at least 8h."""
    xmin, xmax, ymin, ymax = domain.bbox()
    for _ in range(max_tries):
        wx = rng.uniform(8 * h, max(8 * h, 0.5 * (xmax - xmin)))
        wy = rng.uniform(8 * h, max(8 * h, 0.5 * (ymax - ymin)))
        cx = rng.uniform(xmin + wx, xmax - wx) if xmax - xmin > 2 * wx else None
        cy = rng.uniform(ymin + wy, ymax - wy) if ymax - ymin > 2 * wy else None
        if cx is None or cy is None:
            continue
        if _rect_inside(domain, cx, cy, wx, wy):
            return Bump((float(cx), float(cy)), (float(wx), float(wy)))
    raise DegenerateTestFunction(f"no bump with half-width >= {8 * h:g} fits inside the domain")


@dataclass
class RatioReport:
    min_ratio: float
    argmin: dict
    ratios: list
    inequality_constant: float | None
    trials: int
    seed: int
    h: float

    def to_dict(self):
        return {"min_ratio": self.min_ratio, "argmin": self.argmin, "trials": self.trials,
                "seed": self.seed, "h": self.h, "inequality_constant": self.inequality_constant,
                "max_ratio": max(self.ratios) if self.ratios else None}


def lower_bound_ratio(H: MultiplierTriple, domain: Domain, trials: int = 100, seed: int = 0,
                      h: float | None = None, bumps: Sequence | None = None) -> RatioReport:
    """min over random bumps of (pairing) / (weighted energy).

    For scalar pairings the energy is int w1 u_x^2 + w2 u_y^2, for matrix
    pairings int w1 Psi1^2 + w2 Psi2^2, with the family's weights. Also
    returns max ||u||_H / ||L u|| for scalar pairings.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    xmin, xmax, ymin, ymax = domain.bbox()
    if h is None:
        h = max(xmax - xmin, ymax - ymin) / 128
    q = PairingQuadrature(H, domain, h)
    rng = np.random.default_rng(seed)
    ratios, cmax = [], 0.0
    best, arg = math.inf, {}
    vector = H.pairing in ("inside", "outside")
    for k in range(trials):
        if bumps is not None:
            v = bumps[k % len(bumps)]
            desc = {"expr": "supplied"}
        elif vector:
            b1, b2 = random_bump(domain, rng, h), random_bump(domain, rng, h)
            v = (b1.expr, b2.expr)
            desc = {"bump1": b1.to_dict(), "bump2": b2.to_dict()}
        else:
            b1 = random_bump(domain, rng, h)
            v = b1.expr
            desc = b1.to_dict()
        norm = q.energy(v)
        if not norm > 1e-14:
            raise DegenerateTestFunction(f"test function {k} has weighted norm {norm:.3g}")
        left, _ = q.evaluate_sides(v)
        r = left / norm
        ratios.append(r)
        if r < best:
            best, arg = r, {"trial": k, **desc}
        if not vector:
            ln = q.operator_norm2(v)
            if ln > 0:
                cmax = max(cmax, math.sqrt(norm / ln))
    return RatioReport(float(best), arg, ratios, (cmax if not vector else None), trials, seed, h)


# ---------------------------------------------------------------- norms

def field_on_domain(e, domain: Domain, h: float, pad: int = 2) -> DiscreteField:
    """Sample an Expr at the cell centers inside the domain."""
    grid = Grid.covering(domain.bbox(), h, pad=pad)
    Xc, Yc = grid.centers()
    mask = domain.contains(Xc, Yc)
    v = evaluate(as_expr(e), {"x": Xc, "y": Yc}, interface="neg", strict=False) * np.ones_like(Xc)
    return DiscreteField(grid, mask, Xc, Yc, (np.where(mask & np.isfinite(v), v, 0.0),))


def _stiffness(fieldg: DiscreteField, weight) -> sp.csr_matrix:
    """Matrix of sum over cell edges of w (u_i - u_j)^2, with zero values outside the mask.

    x-edges carry |weight| at the edge midpoint, y-edges carry 1.
    """
    mask = fieldg.mask
    h = fieldg.grid.h
    idx = -np.ones(mask.shape, dtype=np.int64)
    idx[mask] = np.arange(int(mask.sum()))
    n = int(mask.sum())
    rows, cols, vals = [], [], []
    diag = np.zeros(n)
    P = np.pad(idx, 1, constant_values=-1)
    for axis in (0, 1):
        A = P[:-1, 1:-1] if axis == 0 else P[1:-1, :-1]
        B = P[1:, 1:-1] if axis == 0 else P[1:-1, 1:]
        sel = (A >= 0) | (B >= 0)
        ia, ib = A[sel], B[sel]
        if axis == 0:
            ii, jj = np.nonzero(sel)
            xe = fieldg.grid.x0 + ii * h
            ye = fieldg.grid.y0 + (jj + 0.5) * h
            w = np.abs(evaluate(as_expr(weight), {"x": xe, "y": ye}, interface="neg") * np.ones(len(ii)))
        else:
            w = np.ones(len(ia))
        both = (ia >= 0) & (ib >= 0)
        rows += [ia[both], ib[both]]
        cols += [ib[both], ia[both]]
        vals += [-w[both], -w[both]]
        np.add.at(diag, ia[ia >= 0], w[ia >= 0])
        np.add.at(diag, ib[ib >= 0], w[ib >= 0])
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(diag)
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


def weighted_norm(f: DiscreteField, weight, mode: str = "L2w", squared: bool = False) -> float:
    """Composite-midpoint norms of a scalar field.

    ``L2w``: int |weight| u^2. ``H10K``: int |weight| u_x^2 + u_y^2.
    ``dualH1K-proxy``: sup over discrete phi of (u, phi) / ||phi||_H10K, a
    finite-dimensional stand-in for the dual norm.
    """
    h = f.grid.h
    u = np.where(f.mask, f.values[0], 0.0)
    if mode == "L2w":
        w = np.abs(evaluate(as_expr(weight), {"x": f.x, "y": f.y}, interface="neg") * np.ones_like(f.x))
        val = h * h * float(np.sum(np.where(f.mask, w * u * u, 0.0)))
    elif mode == "H10K":
        A = _stiffness(f, weight)
        uu = u[f.mask]
        val = float(uu @ (A @ uu))
    elif mode == "dualH1K-proxy":
        A = _stiffness(f, weight).tocsc()
        b = h * h * u[f.mask]
        if not np.any(b):
            val = 0.0
        else:
            val = float(b @ sla.spsolve(A, b))
    else:
        raise ValueError(f"unknown norm mode {mode!r}")
    return val if squared else math.sqrt(max(val, 0.0))


@dataclass
class PoincareEstimate:
    constant: float
    h: float
    nodes: int

    def to_dict(self):
        return {"constant": self.constant, "h": self.h, "nodes": self.nodes}


def poincare_constant(domain: Domain, h: float, K=None, maxiter: int = 10000) -> PoincareEstimate:
    """Best C in ||u||^2 <= C int |K| u_x^2 + u_y^2 over grid fields vanishing off the domain."""
    xmin, xmax, ymin, ymax = domain.bbox()
    if max(xmax - xmin, ymax - ymin) / h < 32:
        raise DomainError("the grid must have at least 32 cells across the domain")
    Kx = TypeChangeSpec.cold_plasma().K if K is None else (K.K if isinstance(K, TypeChangeSpec) else as_expr(K))
    f = field_on_domain(ONE, domain, h)
    A = _stiffness(f, Kx).tocsc()
    v0 = np.ones(A.shape[0])
    try:
        vals = sla.eigsh(A, k=1, sigma=0.0, which="LM", v0=v0, maxiter=maxiter, return_eigenvectors=False)
    except sla.ArpackNoConvergence as exc:
        raise Nonconvergence("inverse iteration for the Poincare constant did not converge", maxiter) from exc
    lam = float(vals[0])
    return PoincareEstimate(h * h / lam, h, A.shape[0])


# ---------------------------------------------------------------- obstruction

def obstruction_scan(Kx, a_range: Sequence[float], mu_range: Sequence[float], m_range: Sequence[float],
                     x_window=(-0.5, 0.5), n: int = 2001) -> dict:
    """For K = K(x), alpha(x) = K (-a + mu/2) + (m/2)(x K' - K); report whether alpha < 0
    on the side of x = 0 predicted by the sign of -a + mu/2, for every triple with a of
    opposite sign to mu and m.
    """
    Ke = parse_expr(Kx, ("x",)) if isinstance(Kx, str) else as_expr(Kx)
    xs = np.linspace(x_window[0], x_window[1], n)
    kv = evaluate(Ke, {"x": xs}) * np.ones_like(xs)
    dk = evaluate(diff(Ke, "x"), {"x": xs}, strict=False) * np.ones_like(xs)
    if abs(float(evaluate(Ke, {"x": 0.0}))) > 1e-14:
        raise HypothesisViolated("K(0) must vanish")
    steps = np.diff(kv)
    if not (np.all(steps > 0) or np.all(steps < 0)):
        raise HypothesisViolated("K must be strictly monotone on the window")
    triples = []
    for a in a_range:
        for mu in mu_range:
            for m in m_range:
                if not (np.sign(a) != 0 and np.sign(mu) == np.sign(m) == -np.sign(a)):
                    continue
                alpha = kv * (-a + mu / 2) + (m / 2) * (xs * dk - kv)
                side = "x<0" if -a + mu / 2 > 0 else "x>0"
                sel = xs < 0 if side == "x<0" else xs > 0
                amin = float(alpha[sel].min()) if sel.any() else math.nan
                i = int(np.flatnonzero(sel)[np.argmin(alpha[sel])]) if sel.any() else -1
                triples.append({"a": float(a), "mu": float(mu), "m": float(m), "predicted_side": side,
                                "min_alpha": amin, "argmin_x": float(xs[i]) if i >= 0 else None,
                                "obstruction": bool(amin < 0)})
    if not triples:
        return {"K": to_str(Ke), "triples": [], "count": 0, "fraction": None}
    frac = sum(t["obstruction"] for t in triples) / len(triples)
    return {"K": to_str(Ke), "triples": triples, "count": len(triples), "fraction": frac,
            "x_window": list(x_window)}
