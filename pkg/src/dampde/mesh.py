"""Structured unit-square triangulations and P1 finite element assembly.

Two P1 spaces live on the same nodes: ``FreeP1`` (all nodes) and
``DirichletP1`` (interior nodes only, homogeneous boundary values by
elimination). Matrices are ``scipy.sparse.csr_matrix`` in canonical form.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .quadrature import DUNAVANT5, TriangleRule

# exact P1 element mass matrix divided by the triangle area
_LOCAL_MASS = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


class MeshMismatch(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Mesh:
    """Uniform triangulation of (0,1)^2 with ``n`` cells per side.

    Nodes are ordered lexicographically by ``(y, x)``: node ``j*(n+1)+i`` sits
    at ``(i/n, j/n)``. Each cell is cut along its bottom-left to top-right
    diagonal, and triangles are stored counterclockwise.
    """

    n: int
    nodes: np.ndarray
    triangles: np.ndarray
    boundary_mask: np.ndarray

    @property
    def h(self):
        return float(np.sqrt(2.0) / self.n)

    @property
    def num_nodes(self):
        return self.nodes.shape[0]

    @property
    def num_triangles(self):
        return self.triangles.shape[0]

    @cached_property
    def vertices(self):
        """Triangle vertex coordinates, shape (nt, 3, 2)."""
        return self.nodes[self.triangles]

    @cached_property
    def signed_areas(self):
        v = self.vertices
        e1 = v[:, 1] - v[:, 0]
        e2 = v[:, 2] - v[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @cached_property
    def gradients(self):
        """Constant gradients of the three local hat functions, shape (nt, 3, 2)."""
        v = self.vertices
        area2 = 2.0 * self.signed_areas
        # grad lambda_k = rot90(opposite edge) / (2A)
        g = np.empty_like(v)
        for k in range(3):
            a = v[:, (k + 1) % 3]
            b = v[:, (k + 2) % 3]
            g[:, k, 0] = (a[:, 1] - b[:, 1]) / area2
            g[:, k, 1] = (b[:, 0] - a[:, 0]) / area2
        return g

    def _scatter(self, local):
        rows = np.repeat(self.triangles, 3, axis=1).ravel()
        cols = np.tile(self.triangles, (1, 3)).ravel()
        N = self.num_nodes
        A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(N, N)).tocsr()
        A.sum_duplicates()
        A.sort_indices()
        return A

    @cached_property
    def mass_full(self):
        local = self.signed_areas[:, None, None] * _LOCAL_MASS[None]
        return self._scatter(local)

    @cached_property
    def stiffness_full(self):
        g = self.gradients
        local = self.signed_areas[:, None, None] * np.einsum("tid,tjd->tij", g, g)
        return self._scatter(local)

    def quadrature_points(self, rule: TriangleRule = DUNAVANT5):
        """Physical quadrature points (nt, nq, 2) and weights (nt, nq) including area."""
        pts = rule.points(self.vertices)
        w = self.signed_areas[:, None] * rule.weights[None, :]
        return pts, w

    def interpolation_at_quadrature(self, rule: TriangleRule = DUNAVANT5):
        """Sparse map from FreeP1 nodal values to values at quadrature points.

        Rows are ordered triangle-major, matching ``quadrature_points``.
        """
        cache = self.__dict__.setdefault("_interp_cache", {})
        key = id(rule)
        if key not in cache:
            nt, nq = self.num_triangles, rule.bary.shape[0]
            rows = np.repeat(np.arange(nt * nq), 3)
            cols = np.repeat(self.triangles, nq, axis=0).ravel()
            vals = np.tile(rule.bary, (nt, 1)).ravel()
            cache[key] = (rule, sp.csr_matrix((vals, (rows, cols)), shape=(nt * nq, self.num_nodes)))
        return cache[key][1]


def build_unit_square_mesh(n: int) -> Mesh:
    if int(n) != n or n < 1:
        raise ValueError(f"mesh needs n >= 1 subdivisions per side, got {n!r}")
    n = int(n)
    s = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(s, s)  # row index j is y
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(n), np.arange(n))
    v00 = (j * (n + 1) + i).ravel()
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper
    ii = np.tile(np.arange(n + 1), n + 1)
    jj = np.repeat(np.arange(n + 1), n + 1)
    boundary = (ii == 0) | (ii == n) | (jj == 0) | (jj == n)
    for a in (nodes, triangles, boundary):
        a.setflags(write=False)
    return Mesh(n, nodes, triangles, boundary)


class SpaceKind(enum.Enum):
    DirichletP1 = "dirichlet"
    FreeP1 = "free"


@dataclass(frozen=True, eq=False)
class FeSpace:
    mesh: Mesh
    kind: SpaceKind
    node_of_dof: np.ndarray
    dof_of_node: np.ndarray  # -1 where the node carries no dof

    @property
    def ndofs(self):
        return self.node_of_dof.shape[0]

    def embed(self, u):
        """Extend dof values to all nodes by zero (V_h -> X_h)."""
        u = np.asarray(u)
        if self.kind is SpaceKind.FreeP1:
            return u
        out = np.zeros(u.shape[:-1] + (self.mesh.num_nodes,))
        out[..., self.node_of_dof] = u
        return out

    def restrict(self, u):
        """Nodal values on all nodes -> dof values (drops boundary nodes)."""
        return np.asarray(u)[..., self.node_of_dof]


def _space(mesh, kind):
    cache = mesh.__dict__.setdefault("_spaces", {})
    if kind not in cache:
        if kind is SpaceKind.FreeP1:
            node_of_dof = np.arange(mesh.num_nodes)
        else:
            node_of_dof = np.flatnonzero(~mesh.boundary_mask)
        dof_of_node = np.full(mesh.num_nodes, -1, dtype=np.int64)
        dof_of_node[node_of_dof] = np.arange(node_of_dof.size)
        cache[kind] = FeSpace(mesh, kind, node_of_dof, dof_of_node)
    return cache[kind]


def dirichlet_space(mesh: Mesh) -> FeSpace:
    """V_h: P1 functions vanishing on the boundary."""
    return _space(mesh, SpaceKind.DirichletP1)


def free_space(mesh: Mesh) -> FeSpace:
    """X_h: unconstrained P1 functions."""
    return _space(mesh, SpaceKind.FreeP1)


def _check(mesh, *spaces):
    for s in spaces:
        if s.mesh is not mesh:
            raise MeshMismatch("finite element space was built on a different mesh")


def _block(A, trial, test):
    cache = trial.mesh.__dict__.setdefault("_blocks", {})
    key = (id(A), test.kind, trial.kind)
    if key not in cache:
        B = A
        if test.kind is SpaceKind.DirichletP1:
            B = B[test.node_of_dof]
        if trial.kind is SpaceKind.DirichletP1:
            B = B[:, trial.node_of_dof]
        B = sp.csr_matrix(B)
        B.sort_indices()
        cache[key] = B
    return cache[key]


def assemble_mass(mesh: Mesh, trial: FeSpace, test: FeSpace) -> sp.csr_matrix:
    """L2(Omega) Gram matrix; row ``i`` belongs to the test space."""
    _check(mesh, trial, test)
    return _block(mesh.mass_full, trial, test)


def assemble_stiffness(mesh: Mesh, space: FeSpace) -> sp.csr_matrix:
    """Matrix of (grad psi_j, grad psi_i) without any coefficient."""
    _check(mesh, space)
    return _block(mesh.stiffness_full, space, space)


def evaluate_spatial(f, x, y):
    """Evaluate ``f(x, y)`` and broadcast scalars to the shape of ``x``."""
    return np.broadcast_to(np.asarray(f(x, y), dtype=float), x.shape)


def load_from_quadrature_values(mesh, space, values, rule=DUNAVANT5):
    """Load vector from function values at the quadrature points of ``rule``."""
    _, w = mesh.quadrature_points(rule)
    P = mesh.interpolation_at_quadrature(rule)
    full = P.T @ (w * values).ravel()
    return space.restrict(full)


def assemble_load(mesh: Mesh, space: FeSpace, f, rule: TriangleRule = DUNAVANT5) -> np.ndarray:
    """Vector of (f, psi_i) for a spatial callable ``f(x, y)``."""
    _check(mesh, space)
    pts, _ = mesh.quadrature_points(rule)
    vals = evaluate_spatial(f, pts[..., 0], pts[..., 1])
    return load_from_quadrature_values(mesh, space, vals, rule)


def l2_project(mesh: Mesh, space: FeSpace, f, config=None) -> np.ndarray:
    """Coefficients of the L2(Omega) projection of ``f`` onto ``space``."""
    from .linalg import pcg_solve

    M = assemble_mass(mesh, space, space)
    b = assemble_load(mesh, space, f)
    x, _, _ = pcg_solve(M, b, config)
    return x


def l2_inner_space(mesh: Mesh, space: FeSpace, u, v) -> float:
    M = assemble_mass(mesh, space, space)
    return float(np.asarray(u) @ (M @ np.asarray(v)))


def l2_norm_space(mesh, space, u):
    return float(np.sqrt(max(l2_inner_space(mesh, space, u, u), 0.0)))
