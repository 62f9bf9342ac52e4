import numpy as np
import pytest
from scipy.integrate import quad

from coldplasma.expr import parse_expr
from coldplasma.grid import Grid, d0x, dxx, positive_fraction, sample_field


def test_covering_grid_is_aligned_and_nests():
    g = Grid.covering((0.0, 1.0, 0.0, 0.5), 0.125)
    assert (g.x0, g.y0, g.nx, g.ny) == (0.0, 0.0, 9, 5)
    p = Grid.covering((0.0, 1.0, 0.0, 0.5), 0.125, pad=2)
    assert p.x0 == -0.25 and p.nx == 13
    r = g.refined()
    assert np.allclose(r.xs[::2], g.xs) and r.h == g.h / 2


def test_covering_grid_contains_the_box():
    g = Grid.covering((-0.3, 0.71, 0.05, 0.4), 0.1)
    assert g.xs[0] <= -0.3 and g.xs[-1] >= 0.71
    assert g.ys[0] <= 0.05 and g.ys[-1] >= 0.4


def _exact_fraction(xc, yc, h):
    # area of {x > y^2} inside the cell, by quadrature in y
    f = lambda y: min(max(xc + h / 2 - max(y * y, xc - h / 2), 0.0), h)  # noqa: E731
    return quad(f, yc - h / 2, yc + h / 2, points=[np.sqrt(max(xc, 0.0))], limit=200)[0] / (h * h)


def test_positive_fraction_is_exact_for_linear_K():
    h = 0.1
    xc = np.array([0.25, 0.3, 0.33, 0.5, 0.1])
    yc = np.zeros_like(xc)
    theta = positive_fraction(parse_expr("x - 0.3"), xc, yc, h)
    want = np.clip((xc + h / 2 - 0.3) / h, 0, 1)
    assert np.allclose(theta, want, atol=1e-12)


def test_positive_fraction_on_the_sonic_parabola():
    h = 1 / 16
    ys = np.linspace(0.1, 0.9, 9)
    xc, yc = ys ** 2 + 0.2 * h, ys
    theta = positive_fraction(parse_expr("x - y^2"), xc, yc, h, sub=8)
    want = np.array([_exact_fraction(a, b, h) for a, b in zip(xc, yc)])
    assert np.all((theta > 0) & (theta < 1))
    assert np.max(np.abs(theta - want)) < (1 / 8) ** 2


def test_positive_fraction_far_from_the_zero_set():
    theta = positive_fraction(parse_expr("x - y^2"), np.array([2.0, -2.0]), np.array([0.0, 0.0]), 0.1)
    assert list(theta) == [1.0, 0.0]


def test_difference_stencils_on_quadratics():
    h = 0.1
    g = Grid(0.0, 0.0, h, 12, 3)
    X, Y = g.nodes()
    f = X ** 2
    assert np.allclose(d0x(f, h)[1:-1], 2 * X[1:-1])
    assert np.allclose(dxx(f, h)[1:-1], 2.0)


def test_sample_field_csv(tmp_path):
    g = Grid(0.0, 0.0, 0.5, 3, 3)
    f = sample_field(parse_expr("x + y"), g)
    assert f.components == 1
    f.to_csv(tmp_path / "f.csv")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "x,y,u"
    assert len(lines) == 1 + 4
    x, y, u = map(float, lines[1].split(","))
    assert u == pytest.approx(x + y)
