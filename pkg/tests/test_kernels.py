import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coldplasma import _pykernels, kernels

finite = st.floats(-5, 5, allow_nan=False)
positive = st.floats(0.01, 5)
# exact zeros exercise the one-weight branches
weights = st.one_of(st.just(0.0), st.floats(1e-12, 5))

HAVE_C = kernels.BACKEND == "cython"


def _oracle_margin(a, b, c, p, q):
    W = np.diag([1 / np.sqrt(p), 1 / np.sqrt(q)])
    return float(np.linalg.eigvalsh(W @ np.array([[a, b], [b, c]]) @ W)[0])


@settings(max_examples=200, deadline=None)
@given(finite, finite, finite, positive, positive)
def test_form_margin_is_the_smallest_generalized_eigenvalue(a, b, c, p, q):
    got = float(_pykernels.form_margin(a, b, c, p, q))
    assert got == pytest.approx(_oracle_margin(a, b, c, p, q), rel=1e-9, abs=1e-9)


def test_form_margin_with_degenerate_weights():
    m = _pykernels.form_margin(np.array([2.0, -1.0, 1.0, 0.0]), np.array([0.0, 0.0, 1.0, 0.0]),
                               np.array([3.0, 1.0, 1.0, 0.0]), np.array([0.0, 0.0, 1.0, 0.0]),
                               np.array([1.0, 1.0, 0.0, 0.0]))
    # only gamma weighted: Schur complement; alpha < 0 has no margin; only alpha weighted; zero form
    assert m[0] == pytest.approx(3.0) and m[1] == -np.inf and m[2] == pytest.approx(0.0) and m[3] == np.inf


def test_zero_form_has_zero_margin_even_with_subnormal_weights():
    assert _pykernels.form_margin(0.0, 0.0, 0.0, 0.25, 5e-324) == 0.0


def test_classify_points_on_the_unit_square():
    vx, vy = np.array([0.0, 1.0, 1.0, 0.0]), np.array([0.0, 0.0, 1.0, 1.0])
    px = np.array([0.5, 1.5, 1.0, 0.999, -0.2])
    py = np.array([0.5, 0.5, 0.3, 0.5, 0.5])
    out = kernels.classify_points(px, py, vx, vy, 1e-2)
    assert list(out) == [kernels.INSIDE, kernels.OUTSIDE, kernels.BAND, kernels.BAND, kernels.OUTSIDE]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(-2, 2), st.floats(-2, 2)), min_size=1, max_size=50))
def test_classify_points_matches_a_convex_oracle(pts):
    # regular hexagon of circumradius 1: inside iff all edge half-planes agree
    th = np.arange(6) * np.pi / 3
    vx, vy = np.cos(th), np.sin(th)
    px, py = np.array([p[0] for p in pts]), np.array([p[1] for p in pts])
    cross = [(np.roll(vx, -1)[i] - vx[i]) * (py - vy[i]) - (np.roll(vy, -1)[i] - vy[i]) * (px - vx[i])
             for i in range(6)]
    dist = np.min(np.abs(cross), axis=0)
    inside = np.all(np.array(cross) > 0, axis=0)
    got = kernels.classify_points(px, py, vx, vy, 0.0)
    clear = dist > 1e-9
    assert np.all((got[clear] == kernels.INSIDE) == inside[clear])


@pytest.mark.skipif(not HAVE_C, reason="compiled kernels not built")
@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(finite, finite, finite, weights, weights), min_size=1, max_size=30))
def test_compiled_form_margin_agrees_with_fallback(rows):
    from coldplasma import _ckernels
    cols = [np.array(c, dtype=float) for c in zip(*rows)]
    a = _ckernels.form_margin(*cols)
    b = _pykernels.form_margin(*cols)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)
    assert np.all(np.isinf(a) == np.isinf(b))


@pytest.mark.skipif(not HAVE_C, reason="compiled kernels not built")
@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(-2, 2), st.floats(-2, 2)), min_size=1, max_size=80),
       st.floats(0.0, 0.2))
def test_compiled_classifier_agrees_with_fallback(pts, tol):
    from coldplasma import _ckernels
    th = np.linspace(0, 2 * np.pi, 9)[:-1]
    vx, vy = np.cos(th) * (1 + 0.3 * np.sin(3 * th)), np.sin(th)
    px, py = np.array([p[0] for p in pts]), np.array([p[1] for p in pts])
    assert np.array_equal(_ckernels.classify_points(px, py, vx, vy, tol),
                          _pykernels.classify_points(px, py, vx, vy, tol))


def test_environment_variable_forces_the_fallback():
    env = {**os.environ, "COLDPLASMA_PURE_PYTHON": "1"}
    out = subprocess.run([sys.executable, "-c", "from coldplasma import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
