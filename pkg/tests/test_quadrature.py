import numpy as np
import pytest

from dampde.quadrature import (
    DUNAVANT5,
    ENDPOINT_TIME,
    GAUSS_TIME,
    NODAL,
    QUADRATURE,
    TRIANGLE_DEG7,
    collapsed_gauss_rule,
    gauss_time_rule,
    sampling,
    time_rule,
)


def _monomial_integral(a, b):
    # int over the reference triangle of x^a y^b, divided by its area 1/2
    from math import factorial

    return 2 * factorial(a) * factorial(b) / factorial(a + b + 2)


@pytest.mark.parametrize("rule", [DUNAVANT5, TRIANGLE_DEG7, collapsed_gauss_rule(3)])
def test_triangle_rule_exactness(rule):
    assert np.all(rule.weights > 0)
    assert rule.weights.sum() == pytest.approx(1.0, abs=1e-15)
    x, y = rule.bary[:, 1], rule.bary[:, 2]
    for a in range(rule.degree + 1):
        for b in range(rule.degree + 1 - a):
            assert rule.weights @ (x**a * y**b) == pytest.approx(_monomial_integral(a, b), abs=1e-14)


def test_dunavant_not_degree6():
    x, y = DUNAVANT5.bary[:, 1], DUNAVANT5.bary[:, 2]
    errs = [abs(DUNAVANT5.weights @ (x**a * y**(6 - a)) - _monomial_integral(a, 6 - a)) for a in range(7)]
    assert max(errs) > 1e-8


def test_points_map_to_physical():
    verts = np.array([[[0.0, 0.0], [2.0, 0.0], [0.0, 1.0]]])
    pts = DUNAVANT5.points(verts)
    assert pts.shape == (1, 7, 2)
    np.testing.assert_allclose(pts[0, 0], [2 / 3, 1 / 3])


def test_time_rules():
    for rule in (GAUSS_TIME, gauss_time_rule(3), ENDPOINT_TIME):
        assert rule.weights.sum() == pytest.approx(1.0)
    s = GAUSS_TIME.points
    for k in range(8):
        assert GAUSS_TIME.weights @ s**k == pytest.approx(1 / (k + 1), abs=1e-15)
    np.testing.assert_allclose(ENDPOINT_TIME.nodes(0.25, 0.5), [0.5])


def test_lookup():
    assert time_rule("gauss") is GAUSS_TIME
    assert time_rule("endpoint") is ENDPOINT_TIME
    assert time_rule("gauss2").points.size == 2
    assert sampling("nodal") is NODAL and sampling("quadrature") is QUADRATURE
    assert NODAL.name == "nodal" and QUADRATURE.name == "quadrature"
    with pytest.raises(ValueError):
        sampling("bogus")
    with pytest.raises(ValueError):
        time_rule("simpson")
