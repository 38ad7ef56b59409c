"""Tracking-type optimal control with dG(0)cG(1) controls.

The reduced functional

    j(l) = 1/2 ||phi(l) - phi_d||^2 + 1/2 ||d(l) - d_d||^2 + alpha_l/2 ||l - l_d||^2

is quadratic on the control space of piecewise constant V_h fields. Its
gradient in the space-time L2 product is ``alpha_l (l - P l_d) + z(l)`` where
``z`` is the elliptic part of the discrete adjoint driven by the tracking
residuals, and ``P`` is the L2 projection onto the control space.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .adjoint import solve_adjoint
from .fields import SpaceTimeField, TimeFunction, TimeGrid, as_time_function, sigma_inner, sigma_norm
from .forward import (
    DEFAULT_SOLVERS,
    FIXED_POINT,
    ModelParams,
    Solvers,
    StepMode,
    interval_loads,
    mass_operator,
    solve_state,
)
from .mesh import Mesh, assemble_mass, dirichlet_space, free_space
from .quadrature import QUADRATURE, Sampling, sampling as _sampling

log = logging.getLogger(__name__)


class MaxIterExceeded(RuntimeError):
    def __init__(self, result):
        self.result = result
        super().__init__(
            f"conjugate gradients stopped after {result.iterations} iterations, "
            f"gradient norm {result.grad_norm:.3e}"
        )


@dataclass(frozen=True)
class OptimizerConfig:
    cg_rel_tol: float = 1e-10
    max_cg_iter: int = 500

    def __post_init__(self):
        if not (self.cg_rel_tol > 0 and self.max_cg_iter > 0):
            raise ValueError("optimizer tolerances and iteration caps must be positive")


def _squared_norm_samples(f, mesh, grid, smp: Sampling):
    """Per-interval averages of ``||f(t)||^2`` under the sampling rule."""
    if isinstance(f, SpaceTimeField):
        A = assemble_mass(mesh, f.space, f.space)
        return np.einsum("mi,mi->m", f.coeffs, (A @ f.coeffs.T).T)
    out = np.zeros(grid.M)
    if smp.space == "nodal":
        MX = assemble_mass(mesh, free_space(mesh), free_space(mesh))
    else:
        _, w = mesh.quadrature_points()
    for m in range(1, grid.M + 1):
        a, b = grid.interval(m)
        for wq, t in zip(smp.time.weights, smp.time.nodes(a, b)):
            if smp.space == "nodal":
                v = f.nodal_values(mesh, t)
                out[m - 1] += wq * (v @ (MX @ v))
            else:
                out[m - 1] += wq * np.sum(w * f.quad_values(mesh, t) ** 2)
    return out


@dataclass(eq=False)
class ControlProblem:
    mesh: Mesh
    grid: TimeGrid
    params: ModelParams
    alpha_l: float = 1.0
    desired_phi: TimeFunction | SpaceTimeField | None = None
    desired_d: TimeFunction | SpaceTimeField | None = None
    control_shift: TimeFunction | SpaceTimeField | None = None
    d0: object = None
    sampling: Sampling = QUADRATURE
    mode: StepMode = FIXED_POINT
    solvers: Solvers = DEFAULT_SOLVERS
    stats: dict = field(default_factory=lambda: {"forward": 0, "adjoint": 0})

    def __post_init__(self):
        if not self.alpha_l > 0:
            raise ValueError("alpha_l must be positive")
        self.sampling = _sampling(self.sampling)
        # discrete targets (SpaceTimeField) are used as they are
        for key in ("desired_phi", "desired_d", "control_shift"):
            v = getattr(self, key)
            if not isinstance(v, SpaceTimeField):
                setattr(self, key, as_time_function(v))

    @property
    def V(self):
        return dirichlet_space(self.mesh)

    @property
    def X(self):
        return free_space(self.mesh)

    def _loads(self, f, space):
        return interval_loads(self.mesh, space, self.grid, f, self.sampling)

    @cached_property
    def phi_d_loads(self):
        return self._loads(self.desired_phi, self.V)

    @cached_property
    def d_d_loads(self):
        return self._loads(self.desired_d, self.X)

    @cached_property
    def shift_loads(self):
        return self._loads(self.control_shift, self.V)

    @cached_property
    def projected_shift(self) -> SpaceTimeField:
        """L2 projection of ``l_d`` onto the control space."""
        op = mass_operator(self.mesh, self.V, self.solvers.method, self.solvers.pcg)
        coeffs = np.array([op.solve(b) for b in self.shift_loads])
        return SpaceTimeField(self.grid, self.V, coeffs)

    @cached_property
    def _constants(self):
        out = []
        for f in (self.desired_phi, self.desired_d, self.control_shift):
            out.append(np.zeros(self.grid.M) if f is None else _squared_norm_samples(f, self.mesh, self.grid, self.sampling))
        return out

    def state(self, l: SpaceTimeField, d0=True):
        self.stats["forward"] += 1
        return solve_state(self.mesh, self.params, self.grid, l, self.d0 if d0 else None,
                           mode=self.mode, sampling=self.sampling, solvers=self.solvers)

    def adjoint(self, G1, G2):
        self.stats["adjoint"] += 1
        return solve_adjoint(self.mesh, self.params, self.grid, G1, G2, None,
                             mode=self.mode, sampling=self.sampling, solvers=self.solvers)

    def tracking_loads(self, phi, d):
        """Adjoint data: loads of ``phi - phi_d`` (on V_h) and ``d - d_d`` (on X_h)."""
        MV = assemble_mass(self.mesh, self.V, self.V)
        MX = assemble_mass(self.mesh, self.X, self.X)
        return (MV @ phi.T).T - self.phi_d_loads, (MX @ d.T).T - self.d_d_loads

    def value(self, l, phi, d):
        """Objective from coefficient arrays of control and states."""
        MV = assemble_mass(self.mesh, self.V, self.V)
        MX = assemble_mass(self.mesh, self.X, self.X)
        taus = self.grid.taus
        cphi, cd, cl = self._constants

        def sq(A, u, loads, c):
            return np.sum(taus * (np.einsum("mi,mi->m", u, (A @ u.T).T) - 2 * np.einsum("mi,mi->m", u, loads) + c))

        return 0.5 * (
            sq(MV, phi, self.phi_d_loads, cphi)
            + sq(MX, d, self.d_d_loads, cd)
            + self.alpha_l * sq(MV, l, self.shift_loads, cl)
        )


def zero_control(problem):
    return SpaceTimeField.zeros(problem.grid, problem.V)


def objective(problem: ControlProblem, l: SpaceTimeField) -> float:
    sol = problem.state(l)
    return float(problem.value(l.coeffs, sol.phi.coeffs, sol.d.coeffs))


def reduced_gradient(problem: ControlProblem, l: SpaceTimeField) -> SpaceTimeField:
    """Riesz representative of ``j'(l)`` in the space-time L2 product on the control space."""
    grad, _, _ = _gradient_with_solutions(problem, l)
    return grad


def _gradient_with_solutions(problem, l):
    sol = problem.state(l)
    adj = problem.adjoint(*problem.tracking_loads(sol.phi.coeffs, sol.d.coeffs))
    grad = problem.alpha_l * (l - problem.projected_shift) + adj.z
    return grad, sol, adj


def hessian_apply(problem: ControlProblem, dl: SpaceTimeField, with_state=False):
    """``alpha_l dl + z`` where ``z`` is the adjoint response to the linearized state of ``dl``."""
    lin = problem.state(dl, d0=False)
    MV = assemble_mass(problem.mesh, problem.V, problem.V)
    MX = assemble_mass(problem.mesh, problem.X, problem.X)
    adj = problem.adjoint((MV @ lin.phi.coeffs.T).T, (MX @ lin.d.coeffs.T).T)
    out = problem.alpha_l * dl + adj.z
    return (out, lin) if with_state else out


@dataclass
class OcpResult:
    l: SpaceTimeField
    phi: SpaceTimeField
    d: SpaceTimeField
    z: SpaceTimeField
    p: SpaceTimeField
    history: list
    iterations: int
    grad0_norm: float
    grad_norm: float
    r_vd: float
    converged: bool
    contraction_excess: float = -np.inf
    state_solution: object = None

    @property
    def J(self):
        return self.history[-1]["J"] if self.history else float("nan")


def solve_ocp(problem: ControlProblem, config: OptimizerConfig | None = None) -> OcpResult:
    """Conjugate gradients on the reduced problem, started from zero.

    Stops once the space-time norm of the gradient falls below
    ``cg_rel_tol`` times its initial value. States are updated by linearity,
    so each iteration costs one forward and one backward sweep.
    """
    config = config or OptimizerConfig()
    l = zero_control(problem)
    grad, sol0, _ = _gradient_with_solutions(problem, l)
    phi = sol0.phi.coeffs.copy()
    d = sol0.d.coeffs.copy()
    excess = [sol0.max_ratio_excess()]
    r = -grad
    p = r.copy()
    rr = sigma_inner(r, r)
    g0 = np.sqrt(rr)
    history = [{"iter": 0, "J": problem.value(l.coeffs, phi, d), "grad": g0}]
    target = config.cg_rel_tol * g0
    it = 0
    converged = g0 == 0.0
    while not converged and it < config.max_cg_iter:
        Hp, lin = hessian_apply(problem, p, with_state=True)
        excess.append(lin.max_ratio_excess())
        curv = sigma_inner(p, Hp)
        step = rr / curv
        l = l + step * p
        phi += step * lin.phi.coeffs
        d += step * lin.d.coeffs
        r = r - step * Hp
        rr_new = sigma_inner(r, r)
        it += 1
        history.append({"iter": it, "J": problem.value(l.coeffs, phi, d), "grad": np.sqrt(rr_new)})
        log.debug("cg %d: J=%.6e |g|=%.3e", it, history[-1]["J"], history[-1]["grad"])
        if np.sqrt(rr_new) <= target:
            converged = True
            break
        p = r + (rr_new / rr) * p
        rr = rr_new

    grad, sol, adj = _gradient_with_solutions(problem, l)
    excess += [sol.max_ratio_excess(), adj.max_ratio_excess()]
    gnorm = sigma_norm(grad)
    result = OcpResult(
        l, sol.phi, sol.d, adj.z, adj.p, history, it, g0, gnorm,
        r_vd=sigma_norm(problem.alpha_l * (l - problem.projected_shift) + adj.z),
        converged=converged,
        contraction_excess=max(excess),
        state_solution=sol,
    )
    if not converged:
        raise MaxIterExceeded(result)
    return result
