"""Uniform lattices over a domain's bounding rectangle and discrete fields on them."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .expr import Expr, as_expr, branch, evaluate, has_piecewise


@dataclass(frozen=True)
class Grid:
    """Nodes x0 + i h, y0 + j h for 0 <= i < nx, 0 <= j < ny."""

    x0: float
    y0: float
    h: float
    nx: int
    ny: int

    @classmethod
    def covering(cls, bbox, h: float, pad: int = 0) -> "Grid":
        """Smallest grid aligned to integer multiples of h that covers ``bbox`` plus ``pad`` cells.

        Alignment to multiples of h makes grids nest under halving and puts
        rational vertices such as 0 and 1 on nodes.
        """
        xmin, xmax, ymin, ymax = bbox
        i0 = math.floor(xmin / h + 1e-9) - pad
        i1 = math.ceil(xmax / h - 1e-9) + pad
        j0 = math.floor(ymin / h + 1e-9) - pad
        j1 = math.ceil(ymax / h - 1e-9) + pad
        return cls(i0 * h, j0 * h, h, i1 - i0 + 1, j1 - j0 + 1)

    @property
    def xs(self) -> np.ndarray:
        return self.x0 + self.h * np.arange(self.nx)

    @property
    def ys(self) -> np.ndarray:
        return self.y0 + self.h * np.arange(self.ny)

    def nodes(self):
        return np.meshgrid(self.xs, self.ys, indexing="ij")

    def centers(self):
        """Cell centers, shape (nx-1, ny-1)."""
        return np.meshgrid(self.xs[:-1] + 0.5 * self.h, self.ys[:-1] + 0.5 * self.h, indexing="ij")

    def refined(self) -> "Grid":
        return Grid(self.x0, self.y0, self.h / 2, 2 * self.nx - 1, 2 * self.ny - 1)


# ---------------------------------------------------------------- cut cells

def _triangle_positive_fraction(k0, k1, k2):
    """Area fraction where the linear interpolant of vertex values is positive."""
    v = np.sort(np.stack([k0, k1, k2]), axis=0)
    a, b, c = v
    out = np.zeros_like(a)
    out[a >= 0] = 1.0
    out[(a >= 0) & (c <= 0)] = 0.0
    one_pos = (a < 0) & (b <= 0) & (c > 0)
    with np.errstate(all="ignore"):
        out[one_pos] = (c * c / ((c - a) * (c - b)))[one_pos]
        two_pos = (a < 0) & (b > 0)
        out[two_pos] = (1.0 - a * a / ((b - a) * (c - a)))[two_pos]
    return out


def positive_fraction(K, xc, yc, h: float, sub: int = 8) -> np.ndarray:
    """Fraction of each square cell (center (xc, yc), side h) on which K > 0.

    Cells far from the zero set get 0 or 1 from the sign of K; cells near it
    are split into sub x sub squares, two triangles each, with K interpolated
    linearly on every triangle. The error is O(h^2 / sub^2) per cut cell.
    """
    K = as_expr(K)
    xc = np.asarray(xc, dtype=float)
    yc = np.asarray(yc, dtype=float)
    kc = evaluate(K, {"x": xc, "y": yc}) * np.ones_like(xc)
    theta = (kc > 0).astype(float)
    corners = [evaluate(K, {"x": xc + dx, "y": yc + dy}) * np.ones_like(xc)
               for dx in (-h / 2, h / 2) for dy in (-h / 2, h / 2)]
    kmin = np.minimum.reduce([np.abs(kc)] + [np.abs(k) for k in corners])
    spread = np.maximum.reduce([np.abs(k - kc) for k in corners])
    signs = np.sign(np.stack(corners + [kc]))
    near = (np.any(signs != signs[0], axis=0)) | (kmin <= 2.0 * spread)
    if not near.any():
        return theta
    cx, cy = xc[near], yc[near]
    t = (np.arange(sub + 1) / sub - 0.5) * h
    PX = cx[:, None, None] + t[None, :, None]
    PY = cy[:, None, None] + t[None, None, :]
    kv = evaluate(K, {"x": PX, "y": PY}) * np.ones_like(PX)
    k00, k10 = kv[:, :-1, :-1], kv[:, 1:, :-1]
    k01, k11 = kv[:, :-1, 1:], kv[:, 1:, 1:]
    f = _triangle_positive_fraction(k00, k10, k11) + _triangle_positive_fraction(k00, k11, k01)
    theta[near] = f.sum(axis=(1, 2)) / (2.0 * sub * sub)
    return theta


def branch_values(e, env, interface: str = "neg"):
    """Values of both smooth branches of ``e`` (identical if ``e`` has no piecewise node)."""
    e = as_expr(e)
    if not has_piecewise(e):
        v = evaluate(e, env, interface=interface)
        return v, v
    return evaluate(branch(e, "pos"), env), evaluate(branch(e, "neg"), env)


# ---------------------------------------------------------------- differences
# Arrays are indexed [i, j] ~ (x, y). Callers pad with zeros so the periodic
# wrap of np.roll only ever brings in zeros.

def d0x(f, h):
    return (np.roll(f, -1, 0) - np.roll(f, 1, 0)) / (2 * h)


def d0y(f, h):
    return (np.roll(f, -1, 1) - np.roll(f, 1, 1)) / (2 * h)


def dxx(f, h):
    return (np.roll(f, -1, 0) - 2 * f + np.roll(f, 1, 0)) / (h * h)


def dyy(f, h):
    return (np.roll(f, -1, 1) - 2 * f + np.roll(f, 1, 1)) / (h * h)


# ---------------------------------------------------------------- fields

@dataclass
class DiscreteField:
    """Scalar or two-component values at the points (x, y) of a mask."""

    grid: Grid
    mask: np.ndarray
    x: np.ndarray
    y: np.ndarray
    values: tuple

    @property
    def components(self) -> int:
        return len(self.values)

    def masked(self):
        return tuple(np.where(self.mask, v, 0.0) for v in self.values)

    def to_csv(self, path) -> None:
        names = ["u"] if self.components == 1 else ["u1", "u2"]
        sel = self.mask
        cols = [self.x[sel], self.y[sel]] + [v[sel] for v in self.values]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "y"] + names)
            for row in zip(*cols):
                w.writerow([repr(float(v)) for v in row])


def sample_field(e: Expr, grid: Grid, mask=None, at: str = "centers") -> DiscreteField:
    X, Y = grid.centers() if at == "centers" else grid.nodes()
    v = evaluate(as_expr(e), {"x": X, "y": Y}, interface="neg") * np.ones_like(X)
    m = np.ones(X.shape, dtype=bool) if mask is None else mask
    return DiscreteField(grid, m, X, Y, (np.where(m, v, 0.0),))
