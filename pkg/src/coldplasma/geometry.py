"""Domains with piecewise parametric boundaries and the checks made on them.

Arcs are parametrized over s in [0, 1] and chained counterclockwise. Two arc
kinds exist: closed-form arcs whose coordinates are expressions in ``s``, and
polylines (used for traced characteristics) carrying their own tangents.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .errors import (
    DomainError,
    IntegrationBlowup,
    RoleMismatch,
    StartInElliptic,
)
from .expr import Const, Expr, PowAbs, S, as_expr, diff, evaluate, parse_expr, to_str

ROLES = ("G", "complement", "Gamma")
CHAIN_TOL = 1e-12


def _as_K(K) -> Expr:
    return K.K if hasattr(K, "K") else as_expr(K)


# ---------------------------------------------------------------- arcs

class Arc:
    """Closed-form arc (x(s), y(s)), s in [0, 1]."""

    def __init__(self, x, y, name: str = ""):
        self.x = as_expr(x) if not isinstance(x, str) else parse_expr(x, ("s",))
        self.y = as_expr(y) if not isinstance(y, str) else parse_expr(y, ("s",))
        self.name = name
        self._dx = diff(self.x, "s")
        self._dy = diff(self.y, "s")

    def point(self, s):
        s = np.asarray(s, dtype=float)
        x = evaluate(self.x, {"s": s}, strict=False) * np.ones_like(s)
        y = evaluate(self.y, {"s": s}, strict=False) * np.ones_like(s)
        return x, y

    def tangent(self, s):
        """Derivative (dx/ds, dy/ds); nan or inf where the parametrization is singular."""
        s = np.asarray(s, dtype=float)
        dx = evaluate(self._dx, {"s": s}, strict=False) * np.ones_like(s)
        dy = evaluate(self._dy, {"s": s}, strict=False) * np.ones_like(s)
        return dx, dy

    def describe(self) -> dict:
        return {"name": self.name, "x": to_str(self.x), "y": to_str(self.y)}

    def reversed(self) -> "Arc":
        from .expr import sub
        flip = sub(Const(1.0), S)
        return Arc(_subst_s(self.x, flip), _subst_s(self.y, flip), self.name)


def _subst_s(e: Expr, repl: Expr) -> Expr:
    from . import expr as ex
    if isinstance(e, ex.Var):
        return repl if e.name == "s" else e
    if isinstance(e, (ex.Add, ex.Sub, ex.Mul, ex.Div)):
        return type(e)(_subst_s(e.lhs, repl), _subst_s(e.rhs, repl))
    if isinstance(e, ex.Pow):
        return ex.Pow(_subst_s(e.base, repl), e.exponent)
    if isinstance(e, ex.PowAbs):
        return ex.PowAbs(_subst_s(e.base, repl), e.p, e.signed)
    if isinstance(e, (ex.Exp, ex.Abs, ex.Sign)):
        return type(e)(_subst_s(e.arg, repl))
    if isinstance(e, ex.PiecewiseSign):
        return ex.PiecewiseSign(_subst_s(e.switch, repl), _subst_s(e.pos, repl), _subst_s(e.neg, repl))
    return e


class PolylineArc:
    """Arc given by sample points and unit tangents, parametrized by arclength."""

    def __init__(self, points, tangents, name: str = ""):
        self.points = np.asarray(points, dtype=float)
        self.tangents = np.asarray(tangents, dtype=float)
        if self.points.ndim != 2 or self.points.shape[1] != 2 or len(self.points) < 2:
            raise DomainError("a polyline arc needs at least two points")
        seg = np.hypot(*np.diff(self.points, axis=0).T)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        self._s = cum / cum[-1]
        self.name = name

    def point(self, s):
        s = np.asarray(s, dtype=float)
        return np.interp(s, self._s, self.points[:, 0]), np.interp(s, self._s, self.points[:, 1])

    def tangent(self, s):
        s = np.asarray(s, dtype=float)
        return np.interp(s, self._s, self.tangents[:, 0]), np.interp(s, self._s, self.tangents[:, 1])

    def describe(self) -> dict:
        return {"name": self.name, "polyline_points": len(self.points)}

    def reversed(self) -> "PolylineArc":
        return PolylineArc(self.points[::-1], -self.tangents[::-1], self.name)


# ---------------------------------------------------------------- domain

@dataclass
class Domain:
    arcs: tuple
    roles: dict = field(default_factory=dict)
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.arcs = tuple(self.arcs)
        self._cache = {}
        if not self.arcs:
            raise DomainError("a domain needs at least one arc")
        names = []
        for i, arc in enumerate(self.arcs):
            if not arc.name:
                arc.name = f"arc{i}"
            names.append(arc.name)
        if len(set(names)) != len(names):
            raise DomainError("arc names must be unique")
        for i, arc in enumerate(self.arcs):
            nxt = self.arcs[(i + 1) % len(self.arcs)]
            ex, ey = arc.point(1.0)
            sx, sy = nxt.point(0.0)
            gap = math.hypot(float(ex) - float(sx), float(ey) - float(sy))
            if not gap <= CHAIN_TOL * max(1.0, self._scale_hint()):
                raise DomainError(f"arc {arc.name!r} does not meet {nxt.name!r} (gap {gap:.3g})")
        for name, role in self.roles.items():
            if name not in names:
                raise RoleMismatch(f"role given for unknown arc {name!r}")
            if role not in ROLES:
                raise RoleMismatch(f"unknown role {role!r} for arc {name!r}")
        if self.signed_area() <= 0:
            raise DomainError("boundary must be oriented counterclockwise")

    def _scale_hint(self):
        x, y = self.arcs[0].point(np.linspace(0, 1, 5))
        return float(np.max(np.abs(np.concatenate([x, y]))))

    @property
    def arc_names(self) -> list[str]:
        return [a.name for a in self.arcs]

    def arc(self, name: str):
        for a in self.arcs:
            if a.name == name:
                return a
        raise KeyError(name)

    def boundary(self, n_per_arc: int = 512):
        """Closed polygon through sampled arc points: vertices, arc index, unit tangents."""
        key = ("b", n_per_arc)
        if key not in self._cache:
            pts, idx, tan = [], [], []
            s = np.linspace(0.0, 1.0, n_per_arc + 1)[:-1]
            for k, arc in enumerate(self.arcs):
                x, y = arc.point(s)
                tx, ty = arc.tangent(s)
                nrm = np.hypot(tx, ty)
                with np.errstate(all="ignore"):
                    tx, ty = tx / nrm, ty / nrm
                pts.append(np.column_stack([x, y]))
                tan.append(np.column_stack([tx, ty]))
                idx.append(np.full(len(s), k))
            self._cache[key] = (np.vstack(pts), np.concatenate(idx), np.vstack(tan))
        return self._cache[key]

    def signed_area(self) -> float:
        pts = self.boundary(256)[0]
        x, y = pts[:, 0], pts[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    def bbox(self) -> tuple[float, float, float, float]:
        pts = self.boundary()[0]
        return (float(pts[:, 0].min()), float(pts[:, 0].max()), float(pts[:, 1].min()), float(pts[:, 1].max()))

    def diameter(self) -> float:
        x0, x1, y0, y1 = self.bbox()
        return math.hypot(x1 - x0, y1 - y0)

    def classify(self, x, y, tol: float = 0.0):
        """Vectorized point classification: 1 inside, 0 outside, 2 within tol of the boundary."""
        pts = self.boundary()[0]
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        x, y = np.broadcast_arrays(x, y)
        out = kernels.classify_points(x.ravel(), y.ravel(), pts[:, 0], pts[:, 1], tol)
        return np.asarray(out).reshape(x.shape)

    def contains(self, x, y, tol: float | None = None):
        """Closed-domain membership (boundary band counts as inside)."""
        if tol is None:
            tol = 1e-9 * self.diameter()
        return self.classify(x, y, tol) != kernels.OUTSIDE

    def with_roles(self, roles: Mapping[str, str]) -> "Domain":
        return Domain(self.arcs, dict(roles), self.name, dict(self.params))

    def describe(self) -> dict:
        return {
            "name": self.name,
            "params": dict(self.params),
            "arcs": [a.describe() for a in self.arcs],
            "roles": dict(sorted(self.roles.items())),
            "bbox": list(self.bbox()),
        }


# ---------------------------------------------------------------- built-ins

def _segment(p, q, name):
    (x0, y0), (x1, y1) = p, q
    return Arc(Const(x0) + Const(x1 - x0) * S, Const(y0) + Const(y1 - y0) * S, name)


def box(y0: float = 1.0) -> Domain:
    """Rectangle [0, y0^2] x [0, y0] with sides named III, IV, I, II (counterclockwise from the bottom)."""
    if not y0 > 0:
        raise DomainError(f"box needs y0 > 0, got {y0}")
    x0 = y0 * y0
    arcs = [
        _segment((0.0, 0.0), (x0, 0.0), "III"),
        _segment((x0, 0.0), (x0, y0), "IV"),
        _segment((x0, y0), (0.0, y0), "I"),
        _segment((0.0, y0), (0.0, 0.0), "II"),
    ]
    return Domain(arcs, name="box", params={"y0": y0})


def rect(xa: float, xb: float, ya: float, yb: float) -> Domain:
    if not (xb > xa and yb > ya):
        raise DomainError("rect needs xa < xb and ya < yb")
    arcs = [
        _segment((xa, ya), (xb, ya), "bottom"),
        _segment((xb, ya), (xb, yb), "right"),
        _segment((xb, yb), (xa, yb), "top"),
        _segment((xa, yb), (xa, ya), "left"),
    ]
    return Domain(arcs, name="rect", params={"xa": xa, "xb": xb, "ya": ya, "yb": yb})


def lens(q: float = 0.3, r: float = 2.0) -> Domain:
    """Region between y = x^r (below, elliptic) and y = x^q (above, hyperbolic) for x in [0, 1]."""
    if not 0 < q < 0.5:
        raise DomainError(f"lens needs q in (0, 1/2), got {q}")
    if not r > 1:
        raise DomainError(f"lens needs r > 1, got {r}")
    one_minus_s = Const(1.0) - S
    lower = Arc(S, PowAbs(S, float(r)), "elliptic")
    upper = Arc(one_minus_s, PowAbs(one_minus_s, float(q)), "hyperbolic")
    return Domain([lower, upper], name="lens", params={"q": q, "r": r})


def circle_lens() -> Domain:
    """Chord from (0,0) to (1,1) closed by the circle arc (x-1)^2 + y^2 = 1 above it.

    The arc uses the rational parametrization u = 1 - s of the half-angle tangent.
    """
    u = Const(1.0) - S
    den = Const(1.0) + u * u
    arc = Arc(Const(2.0) * u * u / den, Const(2.0) * u / den, "circle")
    chord = Arc(S, S, "chord")
    return Domain([chord, arc], name="circle_lens", params={})


def cone(apex: float = -1.0, x_right: float = 0.5, dy: float = 1e-3) -> Domain:
    """Domain bounded by the two characteristics of K = x - y^2 through (apex, 0)
    and the vertical line x = x_right.

    The right side is split where it crosses the sonic parabola, so each piece
    has a single type.
    """
    if not apex < 0:
        raise DomainError(f"cone apex must lie in the hyperbolic half-plane x < 0, got {apex}")
    if not x_right > apex:
        raise DomainError("x_right must exceed the apex")
    from .expr import TypeChangeSpec
    K = TypeChangeSpec.cold_plasma()
    up = trace_characteristic(K, (apex, 0.0), branch=+1, direction=+1, dy=dy, stop_x=x_right)
    lo = trace_characteristic(K, (apex, 0.0), branch=-1, direction=-1, dy=dy, stop_x=x_right)
    if up.reason != "target" or lo.reason != "target":
        raise DomainError(f"characteristics from the apex do not reach x = {x_right}")
    y_top = float(up.points[-1, 1])
    y_bot = float(lo.points[-1, 1])
    arcs = [PolylineArc(lo.points, lo.tangents, "lower_char")]
    cuts = [y_bot, y_top]
    if x_right > 0 and math.sqrt(x_right) < y_top:
        r = math.sqrt(x_right)
        cuts = [y_bot, -r, r, y_top]
    names = ["right"] if len(cuts) == 2 else ["right_lower", "right_mid", "right_upper"]
    for name, ya, yb in zip(names, cuts[:-1], cuts[1:]):
        arcs.append(_segment((x_right, ya), (x_right, yb), name))
    upper = PolylineArc(up.points, up.tangents, "upper_char").reversed()
    arcs.append(upper)
    return Domain(arcs, name="cone", params={"apex": apex, "x_right": x_right, "dy": dy})


BUILTINS = {"box": box, "rect": rect, "lens": lens, "circle_lens": circle_lens, "cone": cone}


def builtin_domain(name: str, **params) -> Domain:
    try:
        fn = BUILTINS[name]
    except KeyError:
        raise DomainError(f"unknown built-in domain {name!r}; choose from {sorted(BUILTINS)}") from None
    return fn(**params)


def domain_from_arcs(arcs: Sequence[Mapping], roles: Mapping[str, str] | None = None) -> Domain:
    """Build a domain from ``[{"name": ..., "x": "<expr in s>", "y": "<expr in s>"}, ...]``."""
    return Domain([Arc(a["x"], a["y"], a.get("name", "")) for a in arcs], dict(roles or {}))


# ---------------------------------------------------------------- classification

@dataclass
class ArcLabel:
    label: str
    histogram: dict
    characteristic_fraction: float
    sample_labels: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "histogram": dict(self.histogram),
            "characteristic_fraction": self.characteristic_fraction,
        }


@dataclass
class ArcClassification:
    arcs: dict
    sonic_tol: float
    tangent_tol: float

    def label(self, name: str) -> str:
        return self.arcs[name].label

    def to_dict(self) -> dict:
        return {
            "sonic_tol": self.sonic_tol,
            "tangent_tol": self.tangent_tol,
            "arcs": {k: v.to_dict() for k, v in self.arcs.items()},
        }


def sonic_tolerance(domain: Domain, K) -> float:
    x0, x1, y0, y1 = domain.bbox()
    X, Y = np.meshgrid(np.linspace(x0, x1, 65), np.linspace(y0, y1, 65), indexing="ij")
    vals = evaluate(_as_K(K), {"x": X, "y": Y}, strict=False)
    scale = float(np.nanmax(np.abs(vals)))
    return 1e-9 * max(scale, 1e-300)


def classify_boundary(domain: Domain, K, tol: float | None = None, n: int = 256,
                      tangent_tol: float = 1e-6, min_fraction: float = 0.95) -> ArcClassification:
    Ke = _as_K(K)
    if tol is None:
        tol = sonic_tolerance(domain, Ke)
    s = np.linspace(0.0, 1.0, n)
    out = {}
    for arc in domain.arcs:
        x, y = arc.point(s)
        k = evaluate(Ke, {"x": x, "y": y}, strict=False) * np.ones_like(x)
        labels = np.where(np.abs(k) <= tol, "sonic", np.where(k > 0, "elliptic", "hyperbolic"))
        tx, ty = arc.tangent(s)
        with np.errstate(all="ignore"):
            resid = np.abs(tx * tx + k * ty * ty) / (tx * tx + np.abs(k) * ty * ty)
        hyp = labels == "hyperbolic"
        char_ok = hyp & np.isfinite(resid) & (resid <= tangent_tol)
        frac = float(char_ok.sum() / hyp.sum()) if hyp.any() else 0.0
        hist = {lab: int((labels == lab).sum()) for lab in ("elliptic", "hyperbolic", "sonic")}
        nonsonic = labels[labels != "sonic"]
        if nonsonic.size == 0:
            label = "sonic"
        elif np.all(nonsonic == "elliptic"):
            label = "elliptic"
        elif np.all(nonsonic == "hyperbolic"):
            label = "characteristic" if frac >= min_fraction else "hyperbolic"
        else:
            label = "mixed"
        out[arc.name] = ArcLabel(label, hist, frac, labels)
    return ArcClassification(out, float(tol), tangent_tol)


def assign_roles(domain: Domain, roles: Mapping[str, str], K,
                 classification: ArcClassification | None = None) -> Domain:
    """Attach roles after checking that every Gamma arc is characteristic."""
    cls = classification or classify_boundary(domain, K)
    for name, role in roles.items():
        if name not in domain.arc_names:
            raise RoleMismatch(f"role given for unknown arc {name!r}")
        if role not in ROLES:
            raise RoleMismatch(f"unknown role {role!r}")
        if role == "Gamma" and cls.label(name) != "characteristic":
            raise RoleMismatch(f"arc {name!r} is {cls.label(name)}, not characteristic; it cannot be Gamma")
    return domain.with_roles(roles)


def characteristic_roles(domain: Domain, K, classification: ArcClassification | None = None) -> Domain:
    """G on elliptic arcs, Gamma on characteristic arcs, complement elsewhere."""
    cls = classification or classify_boundary(domain, K)
    roles = {}
    for name in domain.arc_names:
        lab = cls.label(name)
        roles[name] = "G" if lab == "elliptic" else "Gamma" if lab == "characteristic" else "complement"
    return assign_roles(domain, roles, K, cls)


# ---------------------------------------------------------------- boundary inequalities

CHECKS = ("star1", "star2", "starlike", "bQ1", "bQ2", "diffin", "diffin_form")
_CONVENTION = {
    "star1": "b dy - c dx <= 0 on the counterclockwise tangent",
    "star2": "K (b dy - c dx) >= 0 on the counterclockwise tangent",
    "starlike": "b n1 + c n2 >= 0",
    "bQ1": "b n1 - c n2 <= 0",
    "bQ2": "c K n1 + b n2 >= 0",
    "diffin": "dy/dx >= -c/b on non-vertical tangents",
    "diffin_form": "c dx - b dy >= 0 on the counterclockwise tangent",
}


@dataclass
class ArcCheck:
    margin: float
    passed: bool
    worst_point: tuple
    samples: int

    def to_dict(self):
        return {"margin": self.margin, "pass": self.passed, "worst_point": list(self.worst_point), "samples": self.samples}


@dataclass
class BCReport:
    which: str
    convention: str
    arcs: dict

    def passing(self) -> list[str]:
        return [k for k, v in self.arcs.items() if v.passed]

    def to_dict(self):
        return {"which": self.which, "convention": self.convention,
                "arcs": {k: v.to_dict() for k, v in self.arcs.items()}, "passing": self.passing()}


def _normals(tx, ty, normal):
    if normal == "canonical":
        return -ty, tx
    if normal == "outward":
        return ty, -tx
    raise ValueError(f"normal must be 'canonical' or 'outward', got {normal!r}")


def check_bc_inequalities(domain: Domain, b, c, K, which: str, n: int = 256,
                          normal: str = "canonical", tol: float = 1e-10,
                          arcs: Sequence[str] | None = None) -> BCReport:
    """Evaluate one boundary inequality on every arc (corners excluded).

    Margins are signed so that margin >= 0 means the inequality holds; the
    tangent is normalized to unit length.
    """
    if which not in CHECKS:
        raise ValueError(f"unknown check {which!r}; choose from {CHECKS}")
    b, c, Ke = as_expr(b), as_expr(c), _as_K(K)
    s = (np.arange(n) + 0.5) / n
    out = {}
    for arc in domain.arcs:
        if arcs is not None and arc.name not in arcs:
            continue
        x, y = arc.point(s)
        tx, ty = arc.tangent(s)
        nrm = np.hypot(tx, ty)
        ok = np.isfinite(nrm) & (nrm > 0)
        x, y, tx, ty = x[ok], y[ok], tx[ok] / nrm[ok], ty[ok] / nrm[ok]
        env = {"x": x, "y": y}
        bv = evaluate(b, env, interface="neg") * np.ones_like(x)
        cv = evaluate(c, env, interface="neg") * np.ones_like(x)
        kv = evaluate(Ke, env) * np.ones_like(x)
        n1, n2 = _normals(tx, ty, normal)
        if which == "star1":
            m = -(bv * ty - cv * tx)
        elif which == "star2":
            m = kv * (bv * ty - cv * tx)
        elif which == "starlike":
            m = bv * n1 + cv * n2
        elif which == "bQ1":
            m = -(bv * n1 - cv * n2)
        elif which == "bQ2":
            m = cv * kv * n1 + bv * n2
        elif which == "diffin_form":
            m = cv * tx - bv * ty
        else:
            keep = np.abs(tx) > 1e-12
            x, y, tx, ty, bv, cv = x[keep], y[keep], tx[keep], ty[keep], bv[keep], cv[keep]
            with np.errstate(all="ignore"):
                m = ty / tx + cv / bv
        if m.size == 0:
            out[arc.name] = ArcCheck(float("inf"), True, (float("nan"), float("nan")), 0)
            continue
        i = int(np.nanargmin(m))
        scale = max(1.0, float(np.max(np.abs(bv))), float(np.max(np.abs(cv))))
        out[arc.name] = ArcCheck(float(m[i]), bool(np.all(m >= -tol * scale)), (float(x[i]), float(y[i])), int(m.size))
    conv = _CONVENTION[which]
    if which in ("starlike", "bQ1", "bQ2"):
        conv += f" with {normal} normal " + ("(n1, n2) = (-dy, dx)" if normal == "canonical" else "(n1, n2) = (dy, -dx)")
    return BCReport(which, conv, out)


# ---------------------------------------------------------------- flows

@dataclass(frozen=True)
class FlowField:
    """Dilation flow (x e^{-lx t}, y e^{-ly t}) or the field V = -(b, c)."""

    lx: float | None = None
    ly: float | None = None
    b: Expr | None = None
    c: Expr | None = None

    def __post_init__(self):
        dil = self.lx is not None or self.ly is not None
        gen = self.b is not None or self.c is not None
        if dil == gen:
            raise ValueError("give either dilation exponents or (b, c)")
        if dil and not (self.lx > 0 and self.ly > 0):
            raise ValueError("dilation exponents must be positive")

    @property
    def is_dilation(self) -> bool:
        return self.lx is not None

    def describe(self) -> dict:
        if self.is_dilation:
            return {"lx": self.lx, "ly": self.ly}
        return {"b": to_str(as_expr(self.b)), "c": to_str(as_expr(self.c))}


@dataclass
class StarShapedResult:
    star_shaped: bool
    witness: dict | None
    samples: int

    def to_dict(self):
        return {"star_shaped": self.star_shaped, "witness": self.witness, "samples": self.samples}


def star_shaped(domain: Domain, flow: FlowField, n_boundary_samples: int = 64,
                t_max: float = 20.0, dt: float = 0.02, tol_rel: float = 1e-9) -> StarShapedResult:
    """Sampled test that forward trajectories from the boundary stay in the closed domain.

    Dilation trajectories are followed until they have all shrunk to within
    1e-3 of the diameter of an origin lying in the closed domain.
    """
    s = (np.arange(n_boundary_samples) + 0.5) / n_boundary_samples
    starts = np.vstack([np.column_stack(a.point(np.concatenate([[0.0], s]))) for a in domain.arcs])
    diam = domain.diameter()
    tol = tol_rel * diam + 1e-14
    steps = int(math.ceil(t_max / dt))
    p = starts.copy()
    origin_in = bool(domain.contains(np.array([0.0]), np.array([0.0]), tol)[0])
    alive = np.ones(len(p), dtype=bool)
    if not flow.is_dilation:
        b, c = as_expr(flow.b), as_expr(flow.c)

        def V(q):
            env = {"x": q[:, 0], "y": q[:, 1]}
            return -np.column_stack([evaluate(b, env, interface="neg") * np.ones(len(q)),
                                     evaluate(c, env, interface="neg") * np.ones(len(q))])
    for k in range(1, steps + 1):
        t = k * dt
        if flow.is_dilation:
            p = starts * np.array([math.exp(-flow.lx * t), math.exp(-flow.ly * t)])
        else:
            q = p[alive]
            k1 = V(q)
            k2 = V(q + 0.5 * dt * k1)
            k3 = V(q + 0.5 * dt * k2)
            k4 = V(q + dt * k3)
            q = q + dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
            if not np.all(np.isfinite(q)) or np.max(np.abs(q)) > 1e6 * (1.0 + diam):
                raise IntegrationBlowup(f"trajectory left every bounded set by t = {t:.4g}")
            p[alive] = q
            alive &= np.hypot(*V(p).T) > 1e-12
        inside = domain.contains(p[:, 0], p[:, 1], tol)
        if not inside.all():
            i = int(np.flatnonzero(~inside)[0])
            return StarShapedResult(False, {
                "start": [float(starts[i, 0]), float(starts[i, 1])],
                "t": t,
                "exit_point": [float(p[i, 0]), float(p[i, 1])],
            }, len(starts))
        if flow.is_dilation and origin_in and np.max(np.hypot(*p.T)) < 1e-3 * diam:
            break
        if not flow.is_dilation and not alive.any():
            break
    return StarShapedResult(True, None, len(starts))


# ---------------------------------------------------------------- characteristics

@dataclass
class CharacteristicTrace:
    points: np.ndarray
    tangents: np.ndarray
    reason: str

    def as_arc(self, name: str = "characteristic") -> PolylineArc:
        return PolylineArc(self.points, self.tangents, name)


def trace_characteristic(K, start, branch: int = 1, direction: int = -1, dy: float = 1e-3,
                         max_steps: int = 200000, bbox=None, stop_x: float | None = None,
                         tol: float = 1e-12) -> CharacteristicTrace:
    """Integrate dx/dy = branch * sqrt(-K) with classical RK4 in y.

    ``direction`` is the sign of the y step. Stops at the sonic set, on leaving
    ``bbox`` (default: a box of half-width 10 around the start), at ``stop_x``
    or after ``max_steps``.
    """
    if branch not in (1, -1) or direction not in (1, -1):
        raise ValueError("branch and direction must be +1 or -1")
    Ke = _as_K(K)

    def kval(x, y):
        return float(evaluate(Ke, {"x": x, "y": y}))

    x, y = float(start[0]), float(start[1])
    k0 = kval(x, y)
    if k0 > tol:
        raise StartInElliptic(f"K = {k0:.6g} > 0 at the start ({x}, {y})")
    if bbox is None:
        bbox = (x - 10.0, x + 10.0, y - 10.0, y + 10.0)

    def slope(xx, yy):
        return branch * math.sqrt(max(-kval(xx, yy), 0.0))

    def tangent(xx, yy):
        v = np.array([slope(xx, yy) * direction, float(direction)])
        return v / np.hypot(*v)

    pts = [(x, y)]
    tans = [tangent(x, y)]
    if k0 >= -tol:
        return CharacteristicTrace(np.array(pts), np.array(tans), "sonic")
    h = direction * dy
    reason = "cap"
    for _ in range(max_steps):
        k1 = slope(x, y)
        k2 = slope(x + 0.5 * h * k1, y + 0.5 * h)
        k3 = slope(x + 0.5 * h * k2, y + 0.5 * h)
        k4 = slope(x + h * k3, y + h)
        xn = x + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
        yn = y + h
        if stop_x is not None and (xn - stop_x) * (x - stop_x) <= 0 and xn != x:
            f = (stop_x - x) / (xn - x)
            x, y = stop_x, y + f * h
            pts.append((x, y))
            tans.append(tangent(x, y))
            reason = "target"
            break
        if kval(xn, yn) >= -tol:
            lo, hi = 0.0, 1.0
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if kval(x + mid * (xn - x), y + mid * h) >= -tol:
                    hi = mid
                else:
                    lo = mid
            x, y = x + hi * (xn - x), y + hi * h
            pts.append((x, y))
            tans.append(np.array([0.0, float(direction)]))
            reason = "sonic"
            break
        x, y = xn, yn
        pts.append((x, y))
        tans.append(tangent(x, y))
        if not (bbox[0] <= x <= bbox[1] and bbox[2] <= y <= bbox[3]):
            reason = "bbox"
            break
    return CharacteristicTrace(np.array(pts), np.array(tans), reason)


def point_in_domain(domain: Domain, p, tol: float = 1e-9) -> str:
    code = int(domain.classify(np.array([p[0]]), np.array([p[1]]), tol)[0])
    return {kernels.INSIDE: "inside", kernels.OUTSIDE: "outside", kernels.BAND: "boundary"}[code]


def domain_samples(domain: Domain, density: float = 128.0, boundary_n: int = 256):
    """Points of the closed domain: a lattice with ``density`` points per unit
    length over the bounding box, masked to the domain, plus boundary samples."""
    x0, x1, y0, y1 = domain.bbox()
    nx = max(int(math.ceil(density * (x1 - x0))) + 1, 3)
    ny = max(int(math.ceil(density * (y1 - y0))) + 1, 3)
    X, Y = np.meshgrid(np.linspace(x0, x1, nx), np.linspace(y0, y1, ny), indexing="ij")
    keep = domain.contains(X, Y)
    pts = domain.boundary(boundary_n)[0]
    return np.concatenate([X[keep], pts[:, 0]]), np.concatenate([Y[keep], pts[:, 1]])
