"""Numpy implementations of the hot loops. Used when the compiled module is
unavailable or COLDPLASMA_PURE_PYTHON=1."""
import numpy as np

INSIDE, OUTSIDE, BAND = 1, 0, 2


def classify_points(px, py, vx, vy, tol):
    """Classify points against a closed polygon (vertices not repeated).

    Returns int8 codes: 1 strictly inside, 0 outside, 2 within ``tol`` of an edge.
    """
    px = np.ascontiguousarray(px, dtype=float)
    py = np.ascontiguousarray(py, dtype=float)
    ax = np.asarray(vx, dtype=float)
    ay = np.asarray(vy, dtype=float)
    bx = np.roll(ax, -1)
    by = np.roll(ay, -1)
    inside = np.zeros(px.shape, dtype=bool)
    dmin2 = np.full(px.shape, np.inf)
    for x0, y0, x1, y1 in zip(ax, ay, bx, by):
        straddle = (y0 > py) != (y1 > py)
        if straddle.any():
            xc = x0 + (py - y0) * (x1 - x0) / np.where(straddle, y1 - y0, 1.0)
            inside ^= straddle & (px < xc)
        ex, ey = x1 - x0, y1 - y0
        L2 = ex * ex + ey * ey
        if L2 > 0:
            t = np.clip(((px - x0) * ex + (py - y0) * ey) / L2, 0.0, 1.0)
        else:
            t = np.zeros_like(px)
        dx = px - (x0 + t * ex)
        dy = py - (y0 + t * ey)
        np.minimum(dmin2, dx * dx + dy * dy, out=dmin2)
    out = np.where(inside, INSIDE, OUTSIDE).astype(np.int8)
    out[dmin2 <= tol * tol] = BAND
    return out


def form_margin(alpha, beta, gamma, w1, w2):
    """Largest d with [[alpha - d w1, beta], [beta, gamma - d w2]] PSD, pointwise.

    -inf where no such d exists, +inf where both weights vanish and the form is PSD.
    """
    a, b, c, p, q = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (alpha, beta, gamma, w1, w2)))
    D = a * c - b * b
    out = np.full(a.shape, -np.inf)

    both = (p > 0) & (q > 0)
    with np.errstate(all="ignore"):
        # smallest eigenvalue of the weight-scaled matrix, cancellation-free
        sa, sc, sb = a / p, c / q, b / (np.sqrt(p) * np.sqrt(q))
        h = 0.5 * (sa + sc)
        r = np.hypot(0.5 * (sa - sc), sb)
        d1 = np.where(h > 0, (sa * sc - sb * sb) / (h + r), h - r)
    out[both] = d1[both]

    only_q = (p == 0) & (q > 0)
    with np.errstate(all="ignore"):
        d2 = np.where(a > 0, (c - b * b / a) / q, np.where((a == 0) & (b == 0), c / q, -np.inf))
    out[only_q] = d2[only_q]

    only_p = (q == 0) & (p > 0)
    with np.errstate(all="ignore"):
        d3 = np.where(c > 0, (a - b * b / c) / p, np.where((c == 0) & (b == 0), a / p, -np.inf))
    out[only_p] = d3[only_p]

    none = (p == 0) & (q == 0)
    psd = (a >= 0) & (c >= 0) & (D >= 0)
    out[none] = np.where(psd[none], np.inf, -np.inf)
    return out
