import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from dampde.linalg import NonConvergence, SingularMatrix, SolverConfig, SpdOperator, dense_solve, pcg_solve
from dampde.mesh import assemble_mass, assemble_stiffness, build_unit_square_mesh, dirichlet_space


def test_pcg_diagonal():
    d = np.array([1.0, 2.0, 4.0, 8.0])
    b = np.array([3.0, -1.0, 2.0, 5.0])
    x, _, _ = pcg_solve(sp.diags(d).tocsr(), b)
    np.testing.assert_allclose(x, b / d, rtol=1e-14)


def test_pcg_zero_rhs():
    A = sp.identity(5, format="csr") * 3
    x, iters, res = pcg_solve(A, np.zeros(5))
    assert iters == 0 and not np.any(x) and res == 0


def test_pcg_small_spd_matches_dense():
    A = np.array([[4.0, 1, 0], [1, 3, 1], [0, 1, 2]])
    b = np.array([1.0, 2, 3])
    x, _, res = pcg_solve(sp.csr_matrix(A), b)
    np.testing.assert_allclose(x, dense_solve(A, b), rtol=1e-10)
    assert np.linalg.norm(A @ x - b) <= max(1e-12 * np.linalg.norm(b), 1e-14) * 1.0001


def test_pcg_nonconvergence():
    mesh = build_unit_square_mesh(16)
    V = dirichlet_space(mesh)
    K = assemble_stiffness(mesh, V)
    with pytest.raises(NonConvergence) as info:
        pcg_solve(K, np.ones(V.ndofs), SolverConfig(max_iter=3))
    assert info.value.iters == 3 and info.value.residual > 0


def test_pcg_dimension_mismatch():
    with pytest.raises(ValueError):
        pcg_solve(sp.identity(3, format="csr"), np.ones(4))


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(rel_tol=0)
    with pytest.raises(ValueError):
        SolverConfig(max_iter=0)
    with pytest.raises(ValueError):
        SolverConfig(preconditioner="ilu")
    assert SolverConfig().iteration_cap(100) == 200


def test_dense_identity_and_permutation():
    b = np.array([1.0, 2, 3, 4])
    np.testing.assert_allclose(dense_solve(np.eye(4), b), b)
    P = np.eye(4)[[2, 0, 3, 1]]
    np.testing.assert_allclose(dense_solve(P, b), P.T @ b)


def test_dense_random_spd_residual():
    rng = np.random.default_rng(3)
    B = rng.standard_normal((50, 50))
    A = B @ B.T + 50 * np.eye(50)
    b = rng.standard_normal(50)
    x = dense_solve(A, b)
    assert np.linalg.norm(A @ x - b) / np.linalg.norm(b) <= 1e-10


def test_dense_guards():
    with pytest.raises(SingularMatrix):
        dense_solve(np.array([[1.0, 2], [2, 4]]), np.ones(2))
    with pytest.raises(ValueError):
        dense_solve(np.ones((2, 3)), np.ones(2))
    with pytest.raises(ValueError):
        dense_solve(np.eye(3), np.ones(3), max_dim=2)


@given(st.integers(2, 8), st.floats(0.1, 10), st.floats(0.1, 10), st.integers(0, 2**31))
@settings(max_examples=25, deadline=None)
def test_pcg_matches_dense_on_assembled_systems(n, alpha, beta, seed):
    mesh = build_unit_square_mesh(n)
    V = dirichlet_space(mesh)
    A = alpha * assemble_stiffness(mesh, V) + beta * assemble_mass(mesh, V, V)
    b = np.random.default_rng(seed).standard_normal(V.ndofs)
    x, _, _ = pcg_solve(A, b)
    y = dense_solve(A, b)
    assert np.linalg.norm(x - y) <= 1e-9 * np.linalg.norm(y)


def test_jacobi_does_not_increase_iterations():
    mesh = build_unit_square_mesh(12)
    V = dirichlet_space(mesh)
    A = assemble_stiffness(mesh, V) + assemble_mass(mesh, V, V)
    rng = np.random.default_rng(4)
    with_j, without = [], []
    for _ in range(10):
        b = rng.standard_normal(V.ndofs)
        with_j.append(pcg_solve(A, b, SolverConfig(preconditioner="jacobi"))[1])
        without.append(pcg_solve(A, b, SolverConfig(preconditioner="none"))[1])
    assert np.mean(with_j) <= np.mean(without)


@pytest.mark.parametrize("method", ["lu", "pcg"])
def test_spd_operator(method):
    mesh = build_unit_square_mesh(6)
    V = dirichlet_space(mesh)
    A = assemble_stiffness(mesh, V) + assemble_mass(mesh, V, V)
    b = np.random.default_rng(5).standard_normal(V.ndofs)
    op = SpdOperator(A, method)
    np.testing.assert_allclose(op.solve(b), dense_solve(A, b), rtol=1e-10)


@pytest.mark.parametrize("method", ["lu", "pcg"])
def test_spd_operator_empty(method):
    op = SpdOperator(sp.csr_matrix((0, 0)), method)
    assert op.solve(np.zeros(0)).size == 0


def test_spd_operator_rejects_unknown_method():
    with pytest.raises(ValueError):
        SpdOperator(sp.identity(2, format="csr"), "cholmod")
