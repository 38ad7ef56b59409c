"""Property suites run by ``dampde verify`` on small random problems."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .adjoint import monolithic_dense_adjoint_step, solve_adjoint
from .fields import SpaceTimeField, TimeGrid, sigma_inner
from .forward import FIXED_POINT, ModelParams, monolithic_dense_step, solve_state, stability_report
from .harness import ManufacturedCase
from .mesh import build_unit_square_mesh, dirichlet_space, free_space
from .optimize import ControlProblem, hessian_apply, objective, reduced_gradient


@dataclass
class Check:
    name: str
    value: float
    tol: float

    @property
    def passed(self):
        return bool(self.value <= self.tol)

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.value:.3e} (tol {self.tol:.1e})"


def random_params(rng):
    return ModelParams(
        alpha=float(rng.uniform(0.1, 5)),
        beta=float(rng.uniform(0.1, 5)),
        delta=float(rng.uniform(0.05, 2)),
        T=float(rng.uniform(0.2, 2)),
    )


def random_grid(rng, T, M):
    """Nonuniform partition of ``[0, T]`` into ``M`` intervals."""
    w = rng.uniform(0.5, 1.5, M)
    return TimeGrid(np.concatenate([[0.0], np.cumsum(w) / w.sum() * T]))


def _rel(a, b):
    scale = max(np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / scale) if np.linalg.norm(b) > 0 else float(np.linalg.norm(a))


def oracle_equivalence(rng, sizes=(1, 2, 4), grids=(1, 2, 4), samples=20):
    """Largest relative deviation of fixed-point sweeps from dense block solves."""
    worst_state = worst_adj = 0.0
    for n in sizes:
        mesh = build_unit_square_mesh(n)
        V, X = dirichlet_space(mesh), free_space(mesh)
        for M in grids:
            for _ in range(samples):
                params = random_params(rng)
                grid = random_grid(rng, params.T, M)
                loads = rng.standard_normal((M, V.ndofs))
                f_loads = rng.standard_normal((M, X.ndofs))
                d0 = rng.standard_normal(X.ndofs)
                sol = solve_state(mesh, params, grid, loads, d0, f=f_loads, mode=FIXED_POINT)
                prev = d0
                for m in range(M):
                    tau = grid.taus[m]
                    phi, d = monolithic_dense_step(mesh, params, tau, prev, loads[m], tau * f_loads[m])
                    worst_state = max(worst_state, _rel(sol.phi.coeffs[m], phi), _rel(sol.d.coeffs[m], d))
                    prev = d
                G1 = rng.standard_normal((M, V.ndofs))
                G2 = rng.standard_normal((M, X.ndofs))
                pT = rng.standard_normal(X.ndofs)
                adj = solve_adjoint(mesh, params, grid, G1, G2, pT, mode=FIXED_POINT)
                nxt = pT
                for m in range(M - 1, -1, -1):
                    z, p = monolithic_dense_adjoint_step(mesh, params, grid.taus[m], nxt, G1[m], G2[m])
                    worst_adj = max(worst_adj, _rel(adj.z.coeffs[m], z), _rel(adj.p.coeffs[m], p))
                    nxt = p
    return worst_state, worst_adj


def duality_defect(rng, n, M):
    """Relative defect of ``(g1, dphi) + (g2, dd) = (dl, z)`` for random data."""
    mesh = build_unit_square_mesh(n)
    V, X = dirichlet_space(mesh), free_space(mesh)
    params = random_params(rng)
    grid = random_grid(rng, params.T, M)
    dl = SpaceTimeField(grid, V, rng.standard_normal((M, V.ndofs)))
    G1 = rng.standard_normal((M, V.ndofs))
    G2 = rng.standard_normal((M, X.ndofs))
    lin = solve_state(mesh, params, grid, dl)
    adj = solve_adjoint(mesh, params, grid, G1, G2)
    taus = grid.taus
    lhs = np.sum(taus * (np.einsum("mi,mi->m", G1, lin.phi.coeffs) + np.einsum("mi,mi->m", G2, lin.d.coeffs)))
    rhs = sigma_inner(dl, adj.z)
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)


def random_control_problem(rng, n=4, M=4):
    mesh = build_unit_square_mesh(n)
    params = random_params(rng)
    grid = random_grid(rng, params.T, M)
    a, b, c = rng.uniform(0.5, 2, 3)
    return ControlProblem(
        mesh, grid, params, alpha_l=float(rng.uniform(0.1, 2)),
        desired_phi=lambda t, x, y: a * np.sin(np.pi * x) * y * np.cos(t),
        desired_d=lambda t, x, y: b * x * (1 + y) * np.exp(-t),
        control_shift=lambda t, x, y: c * np.sin(2 * np.pi * x * y) * (1 + t),
        d0=lambda x, y: np.cos(x + y),
    )


def gradient_fd_defect(rng, n=4, M=4, eps=1e-4):
    """``|<grad j, dl> - central difference|`` relative to ``1 + |j(l)|``."""
    pb = random_control_problem(rng, n, M)
    V = pb.V
    l = SpaceTimeField(pb.grid, V, rng.standard_normal((M, V.ndofs)))
    dl = SpaceTimeField(pb.grid, V, rng.standard_normal((M, V.ndofs)))
    g = reduced_gradient(pb, l)
    fd = (objective(pb, l + eps * dl) - objective(pb, l - eps * dl)) / (2 * eps)
    return abs(sigma_inner(g, dl) - fd) / (1 + abs(objective(pb, l)))


def hessian_symmetry_defect(rng, n=4, M=4):
    pb = random_control_problem(rng, n, M)
    V = pb.V
    u = SpaceTimeField(pb.grid, V, rng.standard_normal((M, V.ndofs)))
    v = SpaceTimeField(pb.grid, V, rng.standard_normal((M, V.ndofs)))
    a, b = sigma_inner(hessian_apply(pb, u), v), sigma_inner(u, hessian_apply(pb, v))
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def run_all(seed=0, quick=False):
    rng = np.random.default_rng(seed)
    samples = 3 if quick else 20
    checks = []
    ode, ell = ManufacturedCase().check_invariants()
    checks.append(Check("manufactured ODE residual", ode, 1e-10))
    checks.append(Check("manufactured elliptic residual", ell, 1e-10))
    s, a = oracle_equivalence(rng, samples=samples)
    checks.append(Check("fixed point vs dense oracle, state", s, 1e-10))
    checks.append(Check("fixed point vs dense oracle, adjoint", a, 1e-10))
    dual = max(duality_defect(rng, int(rng.integers(1, 5)), int(rng.integers(1, 5))) for _ in range(50 if not quick else 10))
    checks.append(Check("duality identity", dual, 1e-9))
    fd = max(gradient_fd_defect(rng) for _ in range(samples))
    checks.append(Check("gradient vs central differences", fd, 1e-6))
    sym = max(hessian_symmetry_defect(rng) for _ in range(samples))
    checks.append(Check("Hessian symmetry", sym, 1e-9))
    slack, excess = np.inf, -np.inf
    for _ in range(samples):
        n, M = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        mesh = build_unit_square_mesh(n)
        params = random_params(rng)
        grid = random_grid(rng, params.T, M)
        V, X = dirichlet_space(mesh), free_space(mesh)
        sol = solve_state(mesh, params, grid, rng.standard_normal((M, V.ndofs)), rng.standard_normal(X.ndofs),
                          f=rng.standard_normal((M, X.ndofs)))
        slack = min(slack, stability_report(sol, params).min_slack)
        excess = max(excess, sol.max_ratio_excess())
    checks.append(Check("stability slack (negated)", -slack, 1e-10))
    checks.append(Check("contraction ratio excess", excess, 1e-8))
    return checks
