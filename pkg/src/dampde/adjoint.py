"""Backward sweep for the discrete dual problem and the space-time bilinear form.

Testing the dual problem with data supported on a single interval gives, for
m = M, ..., 1 and ``p_{M+1} = p_T``,

    alpha (grad z_m, grad psi) + beta (z_m, psi) = beta/delta (p_m, psi) + (g1_m, psi)
    (1 + q) p_m = p_{m+1} + tau_m beta z_m + tau_m P_X g2_m,   q = (beta/delta) tau_m.

The update is the time-reversed twin of the forward step and uses the same
interval kernel, so its fixed-point map has the same contraction factor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import SpaceTimeField
from .forward import (
    DEFAULT_SOLVERS,
    FIXED_POINT,
    _coupled_step,
    interval_loads,
)
from .linalg import dense_solve
from .mesh import assemble_mass, assemble_stiffness, dirichlet_space, free_space
from .quadrature import QUADRATURE


@dataclass
class AdjointSolution:
    z: SpaceTimeField
    p: SpaceTimeField
    steps: list

    def max_ratio_excess(self):
        worst = -np.inf
        for s in self.steps:
            if s.ratios:
                worst = max(worst, max(s.ratios) - s.contraction_bound)
        return worst


def solve_adjoint(mesh, params, grid, g1, g2, pT=None, mode=FIXED_POINT, sampling=QUADRATURE,
                  solvers=DEFAULT_SOLVERS) -> AdjointSolution:
    """Solve the discrete dual equation backwards in time.

    ``g1`` (tested against V_h) and ``g2`` (tested against X_h) accept the
    same forms as the source of ``solve_state``: fields, callables or
    (M, ndofs) arrays of interval-average loads. ``pT`` is a FreeP1 vector,
    zero by default.
    """
    V, X = dirichlet_space(mesh), free_space(mesh)
    G1 = interval_loads(mesh, V, grid, g1, sampling)
    G2 = interval_loads(mesh, X, grid, g2, sampling)
    p_next = np.zeros(X.ndofs) if pT is None else np.asarray(pT, dtype=float)
    z = np.zeros((grid.M, V.ndofs))
    p = np.zeros((grid.M, X.ndofs))
    steps = [None] * grid.M
    for m in range(grid.M, 0, -1):
        tau = grid.taus[m - 1]
        z[m - 1], p[m - 1], steps[m - 1] = _coupled_step(
            mesh, params, tau, p_next, G1[m - 1], tau * G2[m - 1], mode, solvers,
            c=params.beta / params.delta, embed_coef=tau * params.beta,
        )
        p_next = p[m - 1]
    return AdjointSolution(SpaceTimeField(grid, V, z), SpaceTimeField(grid, X, p), steps)


def bilinear_form_apply(params, trial, test) -> float:
    """Evaluate the dG(0) space-time form ``B((phi, d), (psi, lambda))``.

    ``trial`` and ``test`` are pairs of fields, the first on V_h and the
    second on X_h. The form is

        sum_m tau_m [alpha (grad phi_m, grad psi_m) - beta (d_m - phi_m, psi_m)
                     + beta/delta (d_m - phi_m, lambda_m)]
        + sum_{m>=2} (d_m - d_{m-1}, lambda_m) + (d_1, lambda_1);

    time derivatives vanish inside intervals for piecewise constants.
    """
    phi, d = trial
    psi, lam = test
    grid = phi.grid
    for f in (d, psi, lam):
        if not np.array_equal(f.grid.breakpoints, grid.breakpoints):
            raise ValueError("fields live on different time grids")
    mesh = phi.space.mesh
    V, X = dirichlet_space(mesh), free_space(mesh)
    K = assemble_stiffness(mesh, V)
    MV = assemble_mass(mesh, V, V)
    MVX = assemble_mass(mesh, X, V)
    MXV = assemble_mass(mesh, V, X)
    MX = assemble_mass(mesh, X, X)

    def pair(A, a, b):  # per-interval b_m^T A a_m
        return np.einsum("mi,mi->m", b.coeffs, (A @ a.coeffs.T).T)

    a, b, dl = params.alpha, params.beta, params.delta
    per_interval = (
        a * pair(K, phi, psi)
        - b * (pair(MVX, d, psi) - pair(MV, phi, psi))
        + b / dl * (pair(MX, d, lam) - pair(MXV, phi, lam))
    )
    total = float(np.sum(grid.taus * per_interval))
    jumps = np.diff(d.coeffs, axis=0)
    total += float(np.sum(np.einsum("mi,mi->m", lam.coeffs[1:], (MX @ jumps.T).T)))
    total += float(lam.coeffs[0] @ (MX @ d.coeffs[0]))
    return total


def monolithic_dense_adjoint_step(mesh, params, tau, p_next, G1, G2):
    """Brute-force oracle for one backward interval: dense block solve for ``(z_m, p_m)``."""
    V, X = dirichlet_space(mesh), free_space(mesh)
    K = assemble_stiffness(mesh, V).toarray()
    MV = assemble_mass(mesh, V, V).toarray()
    MVX = assemble_mass(mesh, X, V).toarray()
    MXV = assemble_mass(mesh, V, X).toarray()
    MX = assemble_mass(mesh, X, X).toarray()
    q = params.beta / params.delta * tau
    nv, nx = V.ndofs, X.ndofs
    A = np.zeros((nv + nx, nv + nx))
    A[:nv, :nv] = params.alpha * K + params.beta * MV
    A[:nv, nv:] = -params.beta / params.delta * MVX
    A[nv:, :nv] = -tau * params.beta * MXV
    A[nv:, nv:] = (1.0 + q) * MX
    sol = dense_solve(A, np.concatenate([G1, MX @ p_next + tau * G2]))
    return sol[:nv], sol[nv:]
