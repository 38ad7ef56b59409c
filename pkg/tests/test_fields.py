import numpy as np
import pytest

from dampde.fields import (
    SeparableFunction,
    SpaceTimeField,
    TimeFunction,
    TimeGrid,
    as_time_function,
    sigma_inner,
    sigma_norm,
)
from dampde.mesh import assemble_load, build_unit_square_mesh, dirichlet_space, free_space


def test_grid_validation():
    with pytest.raises(ValueError):
        TimeGrid([0.0])
    with pytest.raises(ValueError):
        TimeGrid([0.1, 1.0])
    with pytest.raises(ValueError):
        TimeGrid([0.0, 0.5, 0.5])
    with pytest.raises(ValueError):
        TimeGrid.uniform(1.0, 0)


def test_uniform_grid():
    g = TimeGrid.uniform(1.0, 8)
    assert g.M == 8 and g.T == 1.0 and g.tau == 0.125
    assert g.taus.sum() == pytest.approx(1.0)
    assert g.interval(1) == (0.0, 0.125)


def test_field_semantics():
    mesh = build_unit_square_mesh(3)
    V = dirichlet_space(mesh)
    g = TimeGrid([0.0, 0.25, 1.0])
    f = SpaceTimeField(g, V, np.array([[1.0] * 4, [2.0] * 4]))
    np.testing.assert_array_equal(f.value_at(0.25), 1.0)  # left-continuous at breakpoints
    np.testing.assert_array_equal(f.value_at(0.3), 2.0)
    np.testing.assert_array_equal(f.jumps(), [[1.0] * 4])
    assert f.nodal().shape == (2, 16)
    with pytest.raises(ValueError):
        SpaceTimeField(g, V, np.zeros((3, 4)))
    h = 2 * f - f
    np.testing.assert_array_equal(h.coeffs, f.coeffs)
    assert sigma_norm(SpaceTimeField.zeros(g, V)) == 0


def test_sigma_inner_constant():
    mesh = build_unit_square_mesh(4)
    X = free_space(mesh)
    g = TimeGrid([0.0, 0.5, 2.0])
    one = SpaceTimeField(g, X, np.ones((2, X.ndofs)))
    assert sigma_inner(one, one) == pytest.approx(2.0)


def test_separable_matches_generic():
    mesh = build_unit_square_mesh(5)
    V = dirichlet_space(mesh)
    s = lambda x, y: np.sin(np.pi * x) * y  # noqa: E731
    sep = SeparableFunction([(s, np.exp)])
    gen = TimeFunction(lambda t, x, y: s(x, y) * np.exp(t))
    for spatial in ("quadrature", "nodal"):
        np.testing.assert_allclose(sep.load(mesh, V, 0.3, spatial), gen.load(mesh, V, 0.3, spatial), rtol=1e-13)
    np.testing.assert_allclose(sep.load(mesh, V, 0.3), np.exp(0.3) * assemble_load(mesh, V, s), rtol=1e-13)


def test_as_time_function():
    assert as_time_function(None) is None
    c = as_time_function(2.5)
    assert c(0.1, np.zeros(3), np.zeros(3)).tolist() == [2.5] * 3
    f = as_time_function(lambda t, x, y: t + x)
    assert isinstance(f, TimeFunction)
    assert float(f(1.0, 2.0, 0.0)) == 3.0
