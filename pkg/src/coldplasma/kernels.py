"""Pick the compiled kernels when available, else the numpy fallback.

Set COLDPLASMA_PURE_PYTHON=1 to force the fallback.
"""
import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels
if os.environ.get("COLDPLASMA_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

INSIDE, OUTSIDE, BAND = _pykernels.INSIDE, _pykernels.OUTSIDE, _pykernels.BAND


def classify_points(px, py, vx, vy, tol=0.0):
    return _impl.classify_points(px, py, vx, vy, float(tol))


def form_margin(alpha, beta, gamma, w1, w2):
    return _impl.form_margin(alpha, beta, gamma, w1, w2)
