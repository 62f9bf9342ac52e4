# cython: language_level=3
"""Compiled versions of the kernels in _pykernels."""
import numpy as np
cimport numpy as cnp
from libc.math cimport hypot, sqrt, INFINITY

cnp.import_array()


def classify_points(px, py, vx, vy, double tol):
    cdef const double[::1] X = np.ascontiguousarray(px, dtype=np.float64).ravel()
    cdef const double[::1] Y = np.ascontiguousarray(py, dtype=np.float64).ravel()
    cdef const double[::1] AX = np.ascontiguousarray(vx, dtype=np.float64)
    cdef const double[::1] AY = np.ascontiguousarray(vy, dtype=np.float64)
    cdef Py_ssize_t n = X.shape[0], m = AX.shape[0], i, k, k1
    out_arr = np.empty(n, dtype=np.int8)
    cdef signed char[::1] out = out_arr
    cdef double x, y, x0, y0, x1, y1, ex, ey, L2, t, dx, dy, d2, dmin2, tol2 = tol * tol
    cdef bint inside
    for i in range(n):
        x = X[i]
        y = Y[i]
        inside = False
        dmin2 = INFINITY
        for k in range(m):
            k1 = k + 1 if k + 1 < m else 0
            x0 = AX[k]; y0 = AY[k]; x1 = AX[k1]; y1 = AY[k1]
            if (y0 > y) != (y1 > y):
                if x < x0 + (y - y0) * (x1 - x0) / (y1 - y0):
                    inside = not inside
            ex = x1 - x0
            ey = y1 - y0
            L2 = ex * ex + ey * ey
            t = 0.0
            if L2 > 0:
                t = ((x - x0) * ex + (y - y0) * ey) / L2
                if t < 0.0:
                    t = 0.0
                elif t > 1.0:
                    t = 1.0
            dx = x - (x0 + t * ex)
            dy = y - (y0 + t * ey)
            d2 = dx * dx + dy * dy
            if d2 < dmin2:
                dmin2 = d2
        if dmin2 <= tol2:
            out[i] = 2
        else:
            out[i] = 1 if inside else 0
    return out_arr.reshape(np.shape(px))


def form_margin(alpha, beta, gamma, w1, w2):
    shape = np.broadcast_shapes(np.shape(alpha), np.shape(beta), np.shape(gamma), np.shape(w1), np.shape(w2))
    cdef const double[::1] A = np.ascontiguousarray(np.broadcast_to(np.asarray(alpha, dtype=np.float64), shape)).ravel()
    cdef const double[::1] B = np.ascontiguousarray(np.broadcast_to(np.asarray(beta, dtype=np.float64), shape)).ravel()
    cdef const double[::1] C = np.ascontiguousarray(np.broadcast_to(np.asarray(gamma, dtype=np.float64), shape)).ravel()
    cdef const double[::1] P = np.ascontiguousarray(np.broadcast_to(np.asarray(w1, dtype=np.float64), shape)).ravel()
    cdef const double[::1] Q = np.ascontiguousarray(np.broadcast_to(np.asarray(w2, dtype=np.float64), shape)).ravel()
    cdef Py_ssize_t n = A.shape[0], i
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double a, b, c, p, q, D, sa, sc, sb, h, r
    for i in range(n):
        a = A[i]; b = B[i]; c = C[i]; p = P[i]; q = Q[i]
        D = a * c - b * b
        if p > 0 and q > 0:
            # smallest eigenvalue of the weight-scaled matrix, cancellation-free
            sa = a / p; sc = c / q; sb = b / (sqrt(p) * sqrt(q))
            h = 0.5 * (sa + sc)
            r = hypot(0.5 * (sa - sc), sb)
            if h > 0:
                out[i] = (sa * sc - sb * sb) / (h + r)
            else:
                out[i] = h - r
        elif p == 0 and q > 0:
            if a > 0:
                out[i] = (c - b * b / a) / q
            elif a == 0 and b == 0:
                out[i] = c / q
            else:
                out[i] = -INFINITY
        elif q == 0 and p > 0:
            if c > 0:
                out[i] = (a - b * b / c) / p
            elif c == 0 and b == 0:
                out[i] = a / p
            else:
                out[i] = -INFINITY
        elif p == 0 and q == 0:
            out[i] = INFINITY if (a >= 0 and c >= 0 and D >= 0) else -INFINITY
        else:
            out[i] = -INFINITY
    return out_arr.reshape(shape)
