"""First-order systems L u = A1 u_x + A2 u_y + B u, their symmetrization, boundary
matrices, and a staggered least-squares discretization.

Matrices of expressions are nested tuples ``((m11, m12), (m21, m22))``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla
from scipy.spatial import cKDTree

from .errors import (
    ClassificationMissing,
    ConstraintViolated,
    IterationCapExceeded,
    Nonconvergence,
    RoleMismatch,
    SingularSymmetrizer,
    UnsupportedSystem,
)
from .expr import (
    ONE,
    ZERO,
    Const,
    Expr,
    TypeChangeSpec,
    as_expr,
    diff,
    evaluate,
    parse_expr,
    to_str,
)
from .geometry import Domain, check_bc_inequalities, classify_boundary, domain_samples
from .grid import DiscreteField, Grid

Mat = tuple


# ---------------------------------------------------------------- symbolic 2x2 algebra

def mat(m11, m12, m21, m22) -> Mat:
    return ((as_expr(m11), as_expr(m12)), (as_expr(m21), as_expr(m22)))


def mat_mul(A: Mat, B: Mat) -> Mat:
    return tuple(tuple(A[i][0] * B[0][j] + A[i][1] * B[1][j] for j in range(2)) for i in range(2))


def mat_add(A: Mat, B: Mat) -> Mat:
    return tuple(tuple(A[i][j] + B[i][j] for j in range(2)) for i in range(2))


def mat_sub(A: Mat, B: Mat) -> Mat:
    return tuple(tuple(A[i][j] - B[i][j] for j in range(2)) for i in range(2))


def mat_scale(s, A: Mat) -> Mat:
    s = as_expr(s)
    return tuple(tuple(s * A[i][j] for j in range(2)) for i in range(2))


def mat_T(A: Mat) -> Mat:
    return ((A[0][0], A[1][0]), (A[0][1], A[1][1]))


def mat_sym(A: Mat) -> Mat:
    return mat_scale(0.5, mat_add(A, mat_T(A)))


def mat_diff(A: Mat, v: str) -> Mat:
    return tuple(tuple(diff(A[i][j], v) for j in range(2)) for i in range(2))


def mat_vec(A: Mat, u) -> tuple:
    return (A[0][0] * u[0] + A[0][1] * u[1], A[1][0] * u[0] + A[1][1] * u[1])


def mat_eval(A: Mat, env, interface: str = "neg") -> np.ndarray:
    """Array of shape (2, 2, *sample_shape)."""
    shape = np.broadcast(*[np.asarray(v) for v in env.values()]).shape
    return np.array([[evaluate(A[i][j], env, interface=interface) * np.ones(shape) for j in range(2)]
                     for i in range(2)])


def mat_str(A: Mat) -> list:
    return [[to_str(A[i][j]) for j in range(2)] for i in range(2)]


# ---------------------------------------------------------------- systems

@dataclass(frozen=True)
class FirstOrderSystem:
    A1: Mat
    A2: Mat
    B: Mat
    f: tuple
    K: TypeChangeSpec
    kappa1: Expr = ZERO
    kappa2: Expr = ZERO
    provenance: str = "raw"
    symmetrizer: "Symmetrizer | None" = None

    def apply(self, u) -> tuple:
        """Symbolic L u for a pair of expressions."""
        u = (as_expr(u[0]), as_expr(u[1]))
        ux = (diff(u[0], "x"), diff(u[1], "x"))
        uy = (diff(u[0], "y"), diff(u[1], "y"))
        a, b, c = mat_vec(self.A1, ux), mat_vec(self.A2, uy), mat_vec(self.B, u)
        return (a[0] + b[0] + c[0], a[1] + b[1] + c[1])

    def with_f(self, f) -> "FirstOrderSystem":
        return replace(self, f=(as_expr(f[0]), as_expr(f[1])))

    def describe(self) -> dict:
        return {
            "A1": mat_str(self.A1),
            "A2": mat_str(self.A2),
            "B": mat_str(self.B),
            "f": [to_str(self.f[0]), to_str(self.f[1])],
            "K": to_str(self.K.K),
            "provenance": self.provenance,
        }


def _as_typechange(K) -> TypeChangeSpec:
    if isinstance(K, TypeChangeSpec):
        return K
    if isinstance(K, str) and K.startswith("sigma:"):
        return TypeChangeSpec.sigma_form(parse_expr(K[len("sigma:"):], ("y",)))
    raise TypeError("K must be a TypeChangeSpec or 'sigma:<expr in y>'")


def assemble_system(K, kappa1=0.0, kappa2=0.0, f=(0.0, 0.0)) -> FirstOrderSystem:
    """The raw cold-plasma system with A1 = diag(K, -1), A2 = [[0,1],[1,0]], B = [[k1,k2],[0,0]].

    ``K`` is a TypeChangeSpec or ``"sigma:<expr>"`` for K = x - sigma(y).
    """
    K = _as_typechange(K)
    k1, k2 = as_expr(kappa1), as_expr(kappa2)
    return FirstOrderSystem(
        mat(K.K, ZERO, ZERO, -1.0), mat(ZERO, ONE, ONE, ZERO), mat(k1, k2, ZERO, ZERO),
        (as_expr(f[0]), as_expr(f[1])), K, k1, k2,
    )


def adjoint_system(sys: FirstOrderSystem, f=(0.0, 0.0)) -> FirstOrderSystem:
    """L* w = A1 w_x + A2 w_y + (A1_x + A2_y - B^T) w, so that (L u, w) + (u, L* w) is a boundary term."""
    Bs = mat_sub(mat_add(mat_diff(sys.A1, "x"), mat_diff(sys.A2, "y")), mat_T(sys.B))
    return FirstOrderSystem(sys.A1, sys.A2, Bs, (as_expr(f[0]), as_expr(f[1])), sys.K,
                            sys.kappa1, sys.kappa2, "adjoint")


def assemble_adjoint_system(K, kappa1=0.0, f=(0.0, 0.0)) -> FirstOrderSystem:
    return adjoint_system(assemble_system(K, kappa1, 0.0), f)


def _structure_ok(sys: FirstOrderSystem, samples) -> bool:
    env = {"x": samples[0], "y": samples[1]}
    A1 = mat_eval(sys.A1, env)
    A2 = mat_eval(sys.A2, env)
    k = evaluate(sys.K.K, env) * np.ones_like(samples[0])
    want1 = np.array([[k, 0 * k], [0 * k, -1 + 0 * k]])
    want2 = np.array([[0 * k, 1 + 0 * k], [1 + 0 * k, 0 * k]])
    return bool(np.allclose(A1, want1, atol=1e-12) and np.allclose(A2, want2, atol=1e-12))


# ---------------------------------------------------------------- symmetrization

@dataclass(frozen=True)
class Symmetrizer:
    b: Expr
    c: Expr

    def __post_init__(self):
        object.__setattr__(self, "b", as_expr(self.b))
        object.__setattr__(self, "c", as_expr(self.c))

    def E(self, K: Expr) -> Mat:
        return mat(self.b, -(self.c * K), self.c, self.b)

    def describe(self):
        return {"b": to_str(self.b), "c": to_str(self.c)}


def _default_samples(domain: Domain | None, density=64.0):
    if domain is None:
        g = np.linspace(-1.0, 1.0, 41)
        X, Y = np.meshgrid(g, g, indexing="ij")
        return X.ravel(), Y.ravel()
    return domain_samples(domain, density)


def symmetrize(sys: FirstOrderSystem, E: Symmetrizer, domain: Domain | None = None,
               density: float = 64.0) -> FirstOrderSystem:
    """(E A1, E A2, E B, E f), after checking det E = b^2 + K c^2 != 0 on samples."""
    xs, ys = _default_samples(domain, density)
    env = {"x": xs, "y": ys}
    b = evaluate(E.b, env, interface="neg") * np.ones_like(xs)
    c = evaluate(E.c, env, interface="neg") * np.ones_like(xs)
    k = evaluate(sys.K.K, env) * np.ones_like(xs)
    det = b * b + k * c * c
    scale = max(1.0, float(np.max(np.abs(b))) ** 2, float(np.max(np.abs(k * c * c))))
    bad = np.abs(det) <= 1e-14 * scale
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise SingularSymmetrizer("det E = b^2 + K c^2 vanishes", (float(xs[i]), float(ys[i])))
    Em = E.E(sys.K.K)
    out = FirstOrderSystem(
        mat_mul(Em, sys.A1), mat_mul(Em, sys.A2), mat_mul(Em, sys.B),
        mat_vec(Em, sys.f), sys.K, sys.kappa1, sys.kappa2, "symmetrized-by-E", E,
    )
    for name in ("A1", "A2"):
        M = mat_eval(getattr(out, name), env)
        asym = float(np.max(np.abs(M[0, 1] - M[1, 0])))
        if asym > 1e-12 * max(1.0, float(np.max(np.abs(M)))):
            raise UnsupportedSystem(f"E {name} is not symmetric (max asymmetry {asym:.3g})")
    return out


# ---------------------------------------------------------------- Q matrix

@dataclass
class QReport:
    Q: Mat
    min_eigenvalue: float
    worst_point: tuple
    positive_definite: bool
    closed_form_max_diff: float | None
    samples: int

    def to_dict(self):
        return {
            "Q": mat_str(self.Q),
            "min_eigenvalue": self.min_eigenvalue,
            "worst_point": list(self.worst_point),
            "positive_definite": self.positive_definite,
            "closed_form_max_diff": self.closed_form_max_diff,
            "samples": self.samples,
        }


def q_closed_form(b, c, K: TypeChangeSpec, kappa1, kappa2) -> Mat:
    """Entries of Q for E L with L the raw cold-plasma system, written out by hand."""
    b, c, k1, k2 = as_expr(b), as_expr(c), as_expr(kappa1), as_expr(kappa2)
    Kx, Ky, Ke = K.Kx, K.Ky, K.K
    bx, by, cx, cy = diff(b, "x"), diff(b, "y"), diff(c, "x"), diff(c, "y")
    q11 = 2 * b * k1 - bx * Ke - b * Kx + cy * Ke + c * Ky
    q12 = b * k2 + c * k1 - cx * Ke - c * Kx - by
    q22 = 2 * c * k2 + bx - cy
    return ((q11, q12), (q12, q22))


def eig2_min(a, b, d):
    """Smallest eigenvalue of symmetric [[a, b], [b, d]], elementwise."""
    return 0.5 * (a + d) - np.sqrt(0.25 * (a - d) ** 2 + b * b)


def q_matrix(sys: FirstOrderSystem, domain: Domain | None = None, density: float = 128.0,
             tol: float = 0.0) -> QReport:
    """Q = 2 B* - A1_x - A2_y with B* the symmetric part of B, plus a sampled positivity report."""
    Q = mat_sub(mat_sub(mat_add(sys.B, mat_T(sys.B)), mat_diff(sys.A1, "x")), mat_diff(sys.A2, "y"))
    xs, ys = _default_samples(domain, density)
    env = {"x": xs, "y": ys}
    Qv = mat_eval(Q, env)
    lam = eig2_min(Qv[0, 0], 0.5 * (Qv[0, 1] + Qv[1, 0]), Qv[1, 1])
    i = int(np.argmin(lam))
    diffmax = None
    if sys.symmetrizer is not None:
        raw_ok = _structure_ok(assemble_system(sys.K, sys.kappa1, sys.kappa2), (xs[:5], ys[:5]))
        if raw_ok:
            C = mat_eval(q_closed_form(sys.symmetrizer.b, sys.symmetrizer.c, sys.K, sys.kappa1, sys.kappa2), env)
            diffmax = float(np.max(np.abs(C - Qv)))
    return QReport(Q, float(lam[i]), (float(xs[i]), float(ys[i])), bool(lam.min() > tol), diffmax, len(xs))


# ---------------------------------------------------------------- boundary matrix

def normals_from_tangent(tx, ty, convention: str = "canonical"):
    if convention == "canonical":
        return -ty, tx
    if convention == "outward":
        return ty, -tx
    raise ValueError(f"unknown normal convention {convention!r}")


def beta_closed_form(b, c, k, n1, n2) -> np.ndarray:
    p = b * n1 - c * n2
    q = c * k * n1 + b * n2
    return np.array([[k * p, q], [q, -p]])


@dataclass
class ArcBoundary:
    label: str
    s: np.ndarray
    x: np.ndarray
    y: np.ndarray
    n: np.ndarray
    beta: np.ndarray
    b: np.ndarray
    c: np.ndarray
    K: np.ndarray
    closed_form_max_diff: float


@dataclass
class BoundaryMatrix:
    arcs: dict
    convention: str

    def to_dict(self):
        return {"convention": self.convention,
                "arcs": {k: {"label": v.label, "samples": int(v.s.size),
                             "closed_form_max_diff": v.closed_form_max_diff} for k, v in self.arcs.items()}}


def boundary_matrix(sys: FirstOrderSystem, domain: Domain, n: int = 256,
                    convention: str = "canonical", classification=None) -> BoundaryMatrix:
    """beta = n1 A1 + n2 A2 on arc samples (corners excluded), checked against the closed form."""
    if sys.symmetrizer is None:
        raise UnsupportedSystem("boundary_matrix needs a symmetrized system")
    cls = classification or classify_boundary(domain, sys.K)
    s = (np.arange(n) + 0.5) / n
    out = {}
    for arc in domain.arcs:
        x, y = arc.point(s)
        tx, ty = arc.tangent(s)
        nrm = np.hypot(tx, ty)
        n1, n2 = normals_from_tangent(tx / nrm, ty / nrm, convention)
        env = {"x": x, "y": y}
        A1 = mat_eval(sys.A1, env)
        A2 = mat_eval(sys.A2, env)
        beta = n1 * A1 + n2 * A2
        b = evaluate(sys.symmetrizer.b, env, interface="neg") * np.ones_like(x)
        c = evaluate(sys.symmetrizer.c, env, interface="neg") * np.ones_like(x)
        k = evaluate(sys.K.K, env) * np.ones_like(x)
        diffmax = float(np.max(np.abs(beta - beta_closed_form(b, c, k, n1, n2))))
        out[arc.name] = ArcBoundary(cls.label(arc.name), s, x, y, np.array([n1, n2]), beta, b, c, k, diffmax)
    return BoundaryMatrix(out, convention)


def _rank2(M, tol):
    """Numerical rank of stacked 2x2 matrices M[..., 2, 2]."""
    sv = np.linalg.svd(M, compute_uv=False)
    return (sv > tol).sum(axis=-1)


def _span_dim(vectors, tol):
    """Dimension of the span of a list of (N, 2) vector arrays."""
    if not vectors:
        return 0
    V = np.stack(vectors, axis=-1)
    sv = np.linalg.svd(V, compute_uv=False)
    return (sv > tol).sum(axis=-1)


def _null_and_range(M, tol):
    """Per-sample orthonormal bases of null space and range, as lists of (N,2) arrays padded with zeros."""
    U, sv, Vt = np.linalg.svd(M)
    r = (sv > tol).sum(axis=-1)
    null = [np.where((r <= j)[:, None], Vt[:, j, :], 0.0) for j in range(2)]
    rng = [np.where((r > j)[:, None], U[:, :, j], 0.0) for j in range(2)]
    return null, rng


def decompose_beta(label: str, b, c, k, n1, n2, tol: float = 1e-12) -> dict:
    """beta_+ / beta_- split and the three admissibility conditions, vectorized over samples.

    On elliptic samples the split is the rank-one/Dirichlet one; on hyperbolic
    samples beta_+ = beta and beta_- = 0.
    """
    if label not in ("elliptic", "hyperbolic"):
        raise ClassificationMissing(f"need an elliptic or hyperbolic label, got {label!r}")
    b, c, k, n1, n2 = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (b, c, k, n1, n2))
    b, c, k, n1, n2 = np.broadcast_arrays(b, c, k, n1, n2)
    beta = np.moveaxis(beta_closed_form(b, c, k, n1, n2), (0, 1), (-2, -1))
    if label == "elliptic":
        bp = np.moveaxis(np.array([[k * b * n1, b * n2], [k * c * n1, c * n2]]), (0, 1), (-2, -1))
        bm = np.moveaxis(np.array([[-k * c * n2, k * c * n1], [b * n2, -b * n1]]), (0, 1), (-2, -1))
    else:
        bp = beta.copy()
        bm = np.zeros_like(beta)
    scale = np.maximum(1.0, np.max(np.abs(beta), axis=(-2, -1)))
    atol = tol * scale
    split_err = np.max(np.abs(bp + bm - beta), axis=(-2, -1))
    np_, rp = _null_and_range(bp, 1e-10 * scale[:, None])
    nm, rm = _null_and_range(bm, 1e-10 * scale[:, None])
    cond_i = _span_dim(np_ + nm, 1e-8) == 2
    dp, dm = _span_dim(rp, 1e-8), _span_dim(rm, 1e-8)
    cond_ii = (dp + dm - _span_dim(rp + rm, 1e-8)) == 0
    mu = bp - bm
    mus = 0.5 * (mu + np.swapaxes(mu, -1, -2))
    lam = eig2_min(mus[..., 0, 0], mus[..., 0, 1], mus[..., 1, 1])
    out = {
        "beta": beta, "beta_plus": bp, "beta_minus": bm, "mu_star": mus,
        "split_max_err": float(split_err.max()),
        "split_exact": bool(np.all(split_err <= atol)),
        "cond_i": cond_i, "cond_ii": cond_ii,
        "mu_star_min_eig": lam,
    }
    if label == "elliptic":
        want = (b * n1 + c * n2)[:, None, None] * np.array([[1.0, 0.0], [0.0, 0.0]])[None] * k[:, None, None] \
            + (b * n1 + c * n2)[:, None, None] * np.array([[0.0, 0.0], [0.0, 1.0]])[None]
        out["mu_star_closed_form_max_diff"] = float(np.max(np.abs(mus - want)))
        tangential = np.stack([n1, n2], axis=-1)
        normal_dir = np.stack([-n2, n1], axis=-1)
        r_t = np.max(np.abs(np.einsum("nij,nj->ni", bm, tangential)), axis=-1)
        r_n = np.max(np.abs(np.einsum("nij,nj->ni", bm, normal_dir)), axis=-1)
        out["dirichlet_equivalent"] = (r_t <= atol) & (r_n > atol)
    return out


@dataclass
class AdmissibilityReport:
    arcs: dict
    convention: str

    @property
    def split_exact(self) -> bool:
        return all(a["split_exact"] for a in self.arcs.values())

    @property
    def mu_star_min(self) -> float:
        vals = [a["mu_star_min_eig"] for a in self.arcs.values() if a["mu_star_min_eig"] is not None]
        return min(vals) if vals else float("nan")

    def to_dict(self):
        return {"convention": self.convention, "arcs": self.arcs,
                "split_exact": self.split_exact, "mu_star_min": self.mu_star_min}


def admissibility(bm: BoundaryMatrix) -> AdmissibilityReport:
    """Run decompose_beta on every elliptic or hyperbolic arc of a boundary matrix."""
    arcs = {}
    for name, ab in bm.arcs.items():
        if ab.label not in ("elliptic", "hyperbolic"):
            arcs[name] = {"label": ab.label, "skipped": True, "split_exact": True, "mu_star_min_eig": None}
            continue
        d = decompose_beta(ab.label, ab.b, ab.c, ab.K, ab.n[0], ab.n[1])
        i = int(np.argmin(d["mu_star_min_eig"]))
        entry = {
            "label": ab.label,
            "split_exact": d["split_exact"],
            "split_max_err": d["split_max_err"],
            "cond_i": bool(d["cond_i"].all()),
            "cond_ii": bool(d["cond_ii"].all()),
            "mu_star_min_eig": float(d["mu_star_min_eig"][i]),
            "mu_star_worst_point": [float(ab.x[i]), float(ab.y[i])],
        }
        if ab.label == "elliptic":
            entry["mu_star_closed_form_max_diff"] = d["mu_star_closed_form_max_diff"]
            entry["dirichlet_equivalent"] = bool(d["dirichlet_equivalent"].all())
        arcs[name] = entry
    return AdmissibilityReport(arcs, bm.convention)


# ---------------------------------------------------------------- discretization

BC_KINDS = ("w1", "w2", "tangential", "conormal", "none")


def w_space_bc(domain: Domain) -> dict:
    """Rows for the space W: w1 = 0 on G, w2 = 0 on the complement, w . t = 0 on Gamma."""
    kinds = {"G": "w1", "complement": "w2", "Gamma": "tangential"}
    missing = [a for a in domain.arc_names if a not in domain.roles]
    if missing:
        raise RoleMismatch(f"arcs without a role: {missing}")
    return {a: kinds[domain.roles[a]] for a in domain.arc_names}


def elliptic_dirichlet_bc(domain: Domain, K) -> dict:
    """Tangential component zero on elliptic arcs, nothing elsewhere."""
    cls = classify_boundary(domain, K)
    return {a: ("tangential" if cls.label(a) == "elliptic" else "none") for a in domain.arc_names}


@dataclass
class DiscreteOperator:
    A: sp.csr_matrix
    grid: Grid
    eh: np.ndarray
    ev: np.ndarray
    nh: np.ndarray
    nv: np.ndarray
    eq1_nodes: tuple
    eq2_cells: tuple
    bc_rows: dict
    sonic_flags: np.ndarray
    system: FirstOrderSystem
    bc: dict
    factor: float = 1.0

    @property
    def n_unknowns(self) -> int:
        return self.A.shape[1]

    @property
    def n_interior_rows(self) -> int:
        return len(self.eq1_nodes[0]) + len(self.eq2_cells[0])

    def scaled(self, factor: float) -> "DiscreteOperator":
        return replace(self, A=(factor * self.A).tocsr(), factor=self.factor * factor)

    def without_bc(self) -> "DiscreteOperator":
        n = self.n_interior_rows
        return replace(self, A=self.A[:n].tocsr(),
                       bc_rows={k: v[:0] if hasattr(v, "__getitem__") else v for k, v in self.bc_rows.items()},
                       bc={a: "none" for a in self.bc})

    def rhs(self, f=None, g=None) -> np.ndarray:
        """Right-hand side: f at equation points, g (callable (x, y) -> value) on BC rows."""
        h = self.grid.h
        f = self.system.f if f is None else (as_expr(f[0]), as_expr(f[1]))
        xs, ys = self.grid.xs, self.grid.ys
        I, J = self.eq1_nodes
        r1 = evaluate(f[0], {"x": xs[I], "y": ys[J]}, interface="neg") * np.ones(len(I))
        I2, J2 = self.eq2_cells
        r2 = evaluate(f[1], {"x": xs[I2] + h / 2, "y": ys[J2] + h / 2}, interface="neg") * np.ones(len(I2))
        nb = self.A.shape[0] - self.n_interior_rows
        rb = np.zeros(nb)
        if g is not None and nb:
            rb = np.asarray(g(self.bc_rows["x"], self.bc_rows["y"], self.bc_rows["a1"], self.bc_rows["a2"]),
                            dtype=float) / h
        return self.factor * np.concatenate([r1, r2, rb])

    def exact_vector(self, u1, u2) -> np.ndarray:
        """Sample a field at the unknowns: u1 on horizontal edges, u2 on vertical edges."""
        h = self.grid.h
        xs, ys = self.grid.xs, self.grid.ys
        out = np.zeros(self.n_unknowns)
        I, J = np.nonzero(self.eh)
        out[self.nh[I, J]] = evaluate(as_expr(u1), {"x": xs[I] + h / 2, "y": ys[J]}, interface="neg") * np.ones(len(I))
        I, J = np.nonzero(self.ev)
        out[self.nv[I, J]] = evaluate(as_expr(u2), {"x": xs[I], "y": ys[J] + h / 2}, interface="neg") * np.ones(len(I))
        return out

    def l2_norm(self, vec) -> float:
        """Discrete L2 norm with one area element h^2 per unknown."""
        return float(self.grid.h * np.linalg.norm(vec))

    def field(self, vec) -> DiscreteField:
        """Cell-center averages of the edge unknowns on cells whose four edges are active."""
        ext = np.concatenate([vec, [0.0]])
        cell = self.eh[:, :-1] & self.eh[:, 1:] & self.ev[:-1, :] & self.ev[1:, :]
        u1 = 0.5 * (ext[self.nh[:, :-1]] + ext[self.nh[:, 1:]])
        u2 = 0.5 * (ext[self.nv[:-1, :]] + ext[self.nv[1:, :]])
        X, Y = self.grid.centers()
        return DiscreteField(self.grid, cell, X, Y, (np.where(cell, u1, 0.0), np.where(cell, u2, 0.0)))

    def dump_triplets(self, path) -> None:
        coo = self.A.tocoo()
        order = np.lexsort((coo.col, coo.row))
        with open(path, "w") as fh:
            for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
                fh.write(f"{int(r)} {int(c)} {float(v)!r}\n")


def _bc_coefficients(kind: str, tx, ty, k):
    if kind == "w1":
        return np.ones_like(tx), np.zeros_like(tx)
    if kind == "w2":
        return np.zeros_like(tx), np.ones_like(tx)
    if kind == "tangential":
        return tx, ty
    if kind == "conormal":
        return k * ty, -tx
    raise ValueError(f"unknown boundary condition kind {kind!r}; choose from {BC_KINDS}")


def build_discrete(sys: FirstOrderSystem, domain: Domain, h: float, bc: Mapping[str, str] | None = None,
                   sonic_bias: bool = True, classification=None) -> DiscreteOperator:
    """Staggered least-squares discretization on the grid nodes inside the closed domain.

    u1 lives on horizontal edges and u2 on vertical edges. The first equation is
    imposed at nodes whose four edges are active, the second at cells whose
    four edges are active, and each boundary condition as one row per boundary
    edge, scaled by 1/h.
    """
    if not _structure_ok(sys, _default_samples(domain, 16.0)):
        raise UnsupportedSystem("the discretization needs A1 = diag(K, -1) and A2 = [[0, 1], [1, 0]]")
    bc = dict(bc or {a: "none" for a in domain.arc_names})
    for name, kind in bc.items():
        if name not in domain.arc_names:
            raise RoleMismatch(f"boundary condition given for unknown arc {name!r}")
        if kind not in BC_KINDS:
            raise ValueError(f"unknown boundary condition kind {kind!r}")
    cls = classification
    for name, role in domain.roles.items():
        if role == "Gamma":
            cls = cls or classify_boundary(domain, sys.K)
            if cls.label(name) != "characteristic":
                raise RoleMismatch(f"arc {name!r} is {cls.label(name)}, not characteristic; it cannot be Gamma")
    grid = Grid.covering(domain.bbox(), h, pad=1)
    xs, ys = grid.xs, grid.ys
    X, Y = grid.nodes()
    mask = domain.contains(X, Y, 1e-9 * domain.diameter())
    eh = mask[:-1, :] & mask[1:, :]
    ev = mask[:, :-1] & mask[:, 1:]
    nh = -np.ones(eh.shape, dtype=np.int64)
    nh[eh] = np.arange(int(eh.sum()))
    nv = -np.ones(ev.shape, dtype=np.int64)
    nv[ev] = np.arange(int(ev.sum())) + int(eh.sum())
    N = int(eh.sum() + ev.sum())
    Kexpr = sys.K.K

    def Bv(i, j, x, y):
        return evaluate(sys.B[i][j], {"x": x, "y": y}, interface="neg") * np.ones_like(x)

    rows, cols, vals = [], [], []
    inn = np.zeros_like(mask)
    inn[1:-1, 1:-1] = eh[:-1, 1:-1] & eh[1:, 1:-1] & ev[1:-1, :-1] & ev[1:-1, 1:]
    I, J = np.nonzero(inn)
    x, y = xs[I], ys[J]
    k = evaluate(Kexpr, {"x": x, "y": y}) * np.ones_like(x)
    flags = np.zeros(len(I), dtype=bool)
    if sonic_bias:
        near = np.abs(k) < h
        if near.any():
            kl = evaluate(Kexpr, {"x": x[near] - h / 2, "y": y[near]}) * np.ones(int(near.sum()))
            kr = evaluate(Kexpr, {"x": x[near] + h / 2, "y": y[near]}) * np.ones(int(near.sum()))
            k = k.copy()
            k[near] = np.maximum(kl, kr)
            flags[near] = True
    b11, b12 = Bv(0, 0, x, y), Bv(0, 1, x, y)
    r = np.arange(len(I))
    for col, val in ((nh[I - 1, J], -k / h + b11 / 2), (nh[I, J], k / h + b11 / 2),
                     (nv[I, J - 1], -1 / h + b12 / 2), (nv[I, J], 1 / h + b12 / 2)):
        rows.append(r)
        cols.append(col)
        vals.append(val)
    nrow = len(I)

    cell = eh[:, :-1] & eh[:, 1:] & ev[:-1, :] & ev[1:, :]
    I2, J2 = np.nonzero(cell)
    xc, yc = xs[I2] + h / 2, ys[J2] + h / 2
    b21, b22 = Bv(1, 0, xc, yc), Bv(1, 1, xc, yc)
    r = nrow + np.arange(len(I2))
    for col, val in ((nh[I2, J2], -1 / h + b21 / 2), (nh[I2, J2 + 1], 1 / h + b21 / 2),
                     (nv[I2, J2], 1 / h + b22 / 2), (nv[I2 + 1, J2], -1 / h + b22 / 2)):
        rows.append(r)
        cols.append(col)
        vals.append(val)
    nrow += len(I2)

    bcx, bcy, bca1, bca2 = [], [], [], []
    if any(kind != "none" for kind in bc.values()):
        npa = max(512, int(4 * domain.diameter() / h))
        pts, arc_idx, tan = domain.boundary(npa)
        tree = cKDTree(pts)
        names = domain.arc_names
        cpad = np.pad(cell, 1)
        hcells = cpad[1:-1, 1:].astype(int) + cpad[1:-1, :-1]
        vcells = cpad[1:, 1:-1].astype(int) + cpad[:-1, 1:-1]
        cand = [("h", i, j, xs[i] + h / 2, ys[j]) for i, j in np.argwhere(eh & (hcells < 2))]
        cand += [("v", i, j, xs[i], ys[j] + h / 2) for i, j in np.argwhere(ev & (vcells < 2))]
        if cand:
            P = np.array([[c[3], c[4]] for c in cand])
            _, idx = tree.query(P)
            for (orient, i, j, px, py), q in zip(cand, idx):
                kind = bc.get(names[arc_idx[q]], "none")
                if kind == "none":
                    continue
                tx, ty = tan[q]
                kq = float(evaluate(Kexpr, {"x": px, "y": py}))
                a1, a2 = (float(v) for v in _bc_coefficients(kind, np.array(tx), np.array(ty), kq))
                if orient == "h":
                    own, other, oc = nh[i, j], [nv[ii, jj] for ii in (i, i + 1) for jj in (j - 1, j)
                                                if 0 <= jj < ev.shape[1] and ev[ii, jj]], (a1, a2)
                else:
                    own, other, oc = nv[i, j], [nh[ii, jj] for jj in (j, j + 1) for ii in (i - 1, i)
                                                if 0 <= ii < eh.shape[0] and eh[ii, jj]], (a2, a1)
                rows.append(np.array([nrow]))
                cols.append(np.array([own]))
                vals.append(np.array([oc[0] / h]))
                for e in other:
                    rows.append(np.array([nrow]))
                    cols.append(np.array([e]))
                    vals.append(np.array([oc[1] / len(other) / h]))
                bcx.append(px)
                bcy.append(py)
                bca1.append(a1)
                bca2.append(a2)
                nrow += 1
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(nrow, N))
    A.sum_duplicates()
    A.sort_indices()
    bc_rows = {"x": np.array(bcx), "y": np.array(bcy), "a1": np.array(bca1), "a2": np.array(bca2)}
    sonic = np.column_stack([xs[I][flags], ys[J][flags]]) if flags.any() else np.zeros((0, 2))
    return DiscreteOperator(A, grid, eh, ev, nh, nv, (I, J), (I2, J2), bc_rows, sonic, sys, bc)


# ---------------------------------------------------------------- solvers

@dataclass
class SolveResult:
    vector: np.ndarray
    field: DiscreteField
    relative_residual: float
    normal_residual: float
    iterations: int
    history: list

    def to_dict(self):
        return {"relative_residual": self.relative_residual, "normal_residual": self.normal_residual,
                "iterations": self.iterations, "history": self.history}


def solve_ls(op: DiscreteOperator, f=None, g=None, rtol: float = 1e-12, maxiter: int = 10000) -> SolveResult:
    """Minimize ||A u - r||^2 by preconditioned conjugate gradients on the normal equations."""
    A = op.A
    rhs = op.rhs(f, g)
    AT = A.T.tocsr()
    nb = float(np.linalg.norm(rhs))
    if nb == 0.0:
        u = np.zeros(A.shape[1])
        return SolveResult(u, op.field(u), 0.0, 0.0, 0, [0.0])
    rhs_n = AT @ rhs
    dn = np.asarray(A.multiply(A).sum(axis=0)).ravel()
    dn[dn == 0] = 1.0
    Nop = sla.LinearOperator((A.shape[1],) * 2, matvec=lambda v: AT @ (A @ v), dtype=float)
    Mop = sla.LinearOperator((A.shape[1],) * 2, matvec=lambda v: v / dn, dtype=float)
    hist = []
    nrm_n = float(np.linalg.norm(rhs_n))

    def cb(xk):
        hist.append(float(np.linalg.norm(rhs_n - Nop @ xk) / nrm_n))

    u, info = sla.cg(Nop, rhs_n, rtol=rtol, atol=0.0, maxiter=maxiter, M=Mop, callback=cb)
    res = float(np.linalg.norm(A @ u - rhs) / nb)
    nres = float(np.linalg.norm(rhs_n - Nop @ u) / nrm_n) if nrm_n > 0 else 0.0
    if info > 0:
        raise IterationCapExceeded(f"CG did not reach rtol {rtol:g} in {maxiter} iterations "
                                   f"(normal-equation residual {nres:.3g})", maxiter, nres)
    return SolveResult(u, op.field(u), res, nres, len(hist), hist)


@dataclass
class SingularValue:
    sigma_min: float
    constant: float
    iterations: int
    vector: np.ndarray = field(repr=False)


def smallest_singular_value(A, tol: float = 1e-8, maxiter: int = 10000) -> SingularValue:
    """sigma_min(A) by shift-invert Lanczos on A^T A; a numerically zero value means a kernel."""
    M = (A.T @ A).tocsc()
    scale = float(abs(M).max()) if M.nnz else 1.0
    shift = -1e-10 * scale
    v0 = np.random.default_rng(0).standard_normal(M.shape[0])
    try:
        vals, vecs = sla.eigsh(M, k=1, sigma=shift, which="LM", v0=v0, tol=tol, maxiter=maxiter)
    except sla.ArpackNoConvergence as exc:
        raise Nonconvergence("shift-invert iteration for sigma_min did not converge", maxiter) from exc
    lam = float(vals[0])
    if lam <= 1e-13 * scale:
        return SingularValue(0.0, math.inf, maxiter, vecs[:, 0])
    s = math.sqrt(lam)
    return SingularValue(s, 1.0 / s, maxiter, vecs[:, 0])


def energy_constant(op: DiscreteOperator, tol: float = 1e-8) -> SingularValue:
    """C_h = 1 / sigma_min of the discrete operator (with its boundary rows)."""
    return smallest_singular_value(op.A, tol)


def check_diffin_domain(domain: Domain, b, c, K, classification=None, n: int = 256):
    """Raise ConstraintViolated with a witness if c dx - b dy < 0 on a non-characteristic arc."""
    cls = classification or classify_boundary(domain, K)
    arcs = [a for a in domain.arc_names if cls.label(a) != "characteristic"]
    rep = check_bc_inequalities(domain, b, c, K, "diffin_form", n=n, arcs=arcs)
    for name, chk in rep.arcs.items():
        if not chk.passed:
            raise ConstraintViolated("diffin", chk.worst_point,
                                     f"arc {name!r}: c dx - b dy has margin {chk.margin:.4g}")
    return rep


@dataclass
class EnergyStudy:
    hs: list
    constants: list
    negative_control: list
    ratio: float
    control_growth: float
    params: dict
    sizes: list

    def to_dict(self):
        def enc(v):
            if math.isnan(v):
                return None
            return v if math.isfinite(v) else "inf"
        return {"h": self.hs, "C": [enc(c) for c in self.constants],
                "negative_control_C": [enc(c) for c in self.negative_control],
                "max_over_min": enc(self.ratio), "negative_control_growth": enc(self.control_growth),
                "params": self.params, "operator_shapes": self.sizes}


def adjoint_energy_study(domain: Domain, hs: Sequence[float], sigma="y^2", kappa1: float = 1.0,
                     m: float = 10.0, t: float = 2.0, negative_control: bool = True) -> EnergyStudy:
    """Energy constants of the adjoint system on W(Omega) across refinements.

    Refuses domains whose non-characteristic boundary fails the differential
    inequality for b = -(m + x), c = -t y, and kappa1 <= 1/2. The negative
    control drops every boundary row; its growth is min over h of the
    uncontrolled constants divided by the largest controlled one (a kernel
    counts as infinite).
    """
    if not kappa1 > 0.5:
        raise ConstraintViolated("kappa1>1/2", None, f"kappa1 = {kappa1}")
    if not t > 1:
        raise ConstraintViolated("t>1", None, f"t = {t}")
    sigma_e = parse_expr(sigma, ("y",)) if isinstance(sigma, str) else as_expr(sigma)
    K = TypeChangeSpec.sigma_form(sigma_e)
    from .expr import X, Y
    b = -(Const(m) + X)
    c = Const(-t) * Y
    cls = classify_boundary(domain, K)
    check_diffin_domain(domain, b, c, K, cls)
    if not domain.roles:
        from .geometry import characteristic_roles
        domain = characteristic_roles(domain, K, cls)
    sys = assemble_adjoint_system(K, kappa1)
    bc = w_space_bc(domain)
    consts, ctrl, sizes = [], [], []
    for h in hs:
        op = build_discrete(sys, domain, h, bc, classification=cls)
        consts.append(energy_constant(op).constant)
        sizes.append(list(op.A.shape))
        if negative_control:
            ctrl.append(energy_constant(op.without_bc()).constant)
    finite = [c for c in consts if math.isfinite(c)]
    ratio = max(finite) / min(finite) if len(finite) == len(consts) and finite else math.inf
    growth = math.nan
    if negative_control and consts:
        growth = min(ctrl) / max(consts) if all(math.isfinite(c) for c in consts) else math.nan
    return EnergyStudy(list(hs), consts, ctrl, ratio, growth,
                       {"sigma": to_str(sigma_e), "kappa1": kappa1, "m": m, "t": t}, sizes)


# ---------------------------------------------------------------- manufactured solutions

@dataclass
class ConvergenceStudy:
    hs: list
    errors: list
    relative_errors: list
    orders: list
    fitted_order: float
    residuals: list
    iterations: list

    def to_dict(self):
        return {"h": self.hs, "l2_error": self.errors, "relative_l2_error": self.relative_errors,
                "pairwise_order": self.orders, "fitted_order": self.fitted_order,
                "relative_residual": self.residuals, "iterations": self.iterations}


def fitted_order(hs, errs) -> float:
    hs, errs = np.asarray(hs, dtype=float), np.asarray(errs, dtype=float)
    if np.any(errs <= 0) or len(hs) < 2:
        return math.nan
    return float(np.polyfit(np.log(hs), np.log(errs), 1)[0])


def manufactured_convergence(sys: FirstOrderSystem, domain: Domain, u_exact, hs: Sequence[float],
                             bc: Mapping[str, str], rtol: float = 1e-12, maxiter: int = 10000) -> ConvergenceStudy:
    """Solve L u = L u_exact with boundary data taken from u_exact and measure the L2 error."""
    u1, u2 = as_expr(u_exact[0]), as_expr(u_exact[1])
    f = sys.apply((u1, u2))

    def g(x, y, a1, a2):
        env = {"x": x, "y": y}
        return a1 * evaluate(u1, env, interface="neg") + a2 * evaluate(u2, env, interface="neg")

    errs, rel, res, its = [], [], [], []
    for h in hs:
        op = build_discrete(sys, domain, h, bc)
        sol = solve_ls(op, f, g, rtol=rtol, maxiter=maxiter)
        ex = op.exact_vector(u1, u2)
        e = op.l2_norm(sol.vector - ex)
        errs.append(e)
        rel.append(e / max(op.l2_norm(ex), 1e-300))
        res.append(sol.relative_residual)
        its.append(sol.iterations)
    orders = [float(math.log(errs[i] / errs[i + 1]) / math.log(hs[i] / hs[i + 1])) if errs[i + 1] > 0 else math.inf
              for i in range(len(errs) - 1)]
    return ConvergenceStudy(list(hs), errs, rel, orders, fitted_order(hs, errs), res, its)
