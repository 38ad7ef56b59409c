"""dG(0)-in-time, P1-in-space solver for the coupled elliptic/ODE state system.

On each interval ``I_m`` the discrete state ``(phi_m, d_m)`` solves

    alpha (grad phi_m, grad psi) + beta (phi_m, psi) = beta (d_m, psi) + (lbar_m, psi)
    (1 + q) d_m = d_{m-1} + q phi_m + P_X(int_{I_m} f),    q = (beta/delta) tau_m

for all ``psi`` in V_h, where ``lbar_m`` is the interval average of the
source. The second line holds nodally because ``phi_m`` lies in V_h, a
subspace of X_h on the same nodes.
"""

from __future__ import annotations

import logging
import threading
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .fields import SpaceTimeField, TimeFunction, TimeGrid, as_time_function, field_loads
from .linalg import SpdOperator, SolverConfig, dense_solve
from .mesh import Mesh, assemble_mass, assemble_stiffness, dirichlet_space, free_space
from .quadrature import QUADRATURE, Sampling, sampling as _sampling

log = logging.getLogger(__name__)

FIXED_POINT_CAP = 200
_ROUNDOFF = 32 * np.finfo(float).eps


class FixedPointDivergence(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelParams:
    alpha: float = 1.0
    beta: float = 1.0
    delta: float = 0.1
    T: float = 1.0

    def __post_init__(self):
        for key in ("alpha", "beta", "delta", "T"):
            v = getattr(self, key)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"parameter {key} must be positive, got {v!r}")

    def contraction_factor(self, tau):
        q = self.beta / self.delta * tau
        return q / (1.0 + q)


@dataclass(frozen=True)
class StepMode:
    """``kind`` is ``"fixed-point"`` or ``"monolithic"``."""

    kind: str = "fixed-point"
    tol: float = 1e-13

    def __post_init__(self):
        if self.kind not in ("fixed-point", "monolithic"):
            raise ValueError(f"unknown step mode {self.kind!r}")
        if not self.tol > 0:
            raise ValueError("fixed-point tolerance must be positive")


FIXED_POINT = StepMode("fixed-point")
MONOLITHIC = StepMode("monolithic")


@dataclass
class StepInfo:
    iterations: int = 0
    ratios: list = field(default_factory=list)
    contraction_bound: float = 0.0


# --- cached operators -------------------------------------------------------

_OPERATORS: OrderedDict = OrderedDict()
_MAX_CACHED = 24
_CACHE_LOCK = threading.RLock()


def _cached(key, build):
    with _CACHE_LOCK:
        op = _OPERATORS.get(key)
        if op is None:
            op = build()
            _OPERATORS[key] = op
            while len(_OPERATORS) > _MAX_CACHED:
                _OPERATORS.popitem(last=False)
        else:
            _OPERATORS.move_to_end(key)
        return op


def _evict(key):
    with _CACHE_LOCK:
        _OPERATORS.pop(key, None)


def clear_operator_cache():
    with _CACHE_LOCK:
        _OPERATORS.clear()


def elliptic_operator(mesh, alpha, mass_coef, method="lu", cfg=None):
    """Cached solver for ``alpha K + mass_coef M`` on V_h."""
    key = (id(mesh), float(alpha), float(mass_coef), method, cfg)

    def build():
        V = dirichlet_space(mesh)
        A = alpha * assemble_stiffness(mesh, V) + mass_coef * assemble_mass(mesh, V, V)
        return mesh, SpdOperator(A, method, cfg)

    m, op = _cached(key, build)
    if m is not mesh:  # id reuse after garbage collection
        _evict(key)
        return elliptic_operator(mesh, alpha, mass_coef, method, cfg)
    return op


def mass_operator(mesh, space, method="lu", cfg=None):
    key = (id(mesh), "mass", space.kind, method, cfg)
    m, op = _cached(key, lambda: (mesh, SpdOperator(assemble_mass(mesh, space, space), method, cfg)))
    if m is not mesh:
        _evict(key)
        return mass_operator(mesh, space, method, cfg)
    return op


@dataclass(frozen=True)
class Solvers:
    """Backend choice for the sparse SPD solves."""

    method: str = "lu"
    pcg: SolverConfig | None = None


DEFAULT_SOLVERS = Solvers()


# --- loads ------------------------------------------------------------------

def time_average_load(mesh, space, grid, l, m, sampling: Sampling | str = QUADRATURE):
    """Load vector of the interval average of ``l`` over ``I_m`` (1-based ``m``).

    The time rule of ``sampling`` computes the average; under the
    ``"endpoint"`` rule it is the value at ``t_m``.
    """
    sampling = _sampling(sampling)
    if not 1 <= m <= grid.M:
        raise IndexError(f"interval index {m} outside 1..{grid.M}")
    l = as_time_function(l)
    a, b = grid.interval(m)
    rule = sampling.time
    return sum(w * l.load(mesh, space, t, sampling.space) for w, t in zip(rule.weights, rule.nodes(a, b)))


def interval_loads(mesh, space, grid, data, sampling=QUADRATURE):
    """Per-interval average loads, shape (M, ndofs).

    ``data`` may be a ``TimeFunction``/callable, a ``SpaceTimeField`` (exact
    Gram products, no time quadrature), an (M, ndofs) array of loads, or None.
    """
    if data is None:
        return np.zeros((grid.M, space.ndofs))
    if isinstance(data, SpaceTimeField):
        if data.grid is not grid and not np.array_equal(data.grid.breakpoints, grid.breakpoints):
            raise ValueError("field lives on a different time grid")
        return field_loads(data, space)
    if isinstance(data, np.ndarray):
        if data.shape != (grid.M, space.ndofs):
            raise ValueError(f"load array shape {data.shape} != {(grid.M, space.ndofs)}")
        return data
    return np.array([time_average_load(mesh, space, grid, data, m, sampling) for m in range(1, grid.M + 1)])


def initial_value(mesh, d0, solvers=DEFAULT_SOLVERS, sampling=QUADRATURE):
    """``P_X d0`` as FreeP1 coefficients; arrays pass through unchanged.

    Under nodal sampling this is the nodal interpolant of ``d0``.
    """
    X = free_space(mesh)
    if d0 is None:
        return np.zeros(X.ndofs)
    if isinstance(d0, np.ndarray):
        if d0.shape != (X.ndofs,):
            raise ValueError("initial value has the wrong length")
        return d0.astype(float)
    if not isinstance(d0, TimeFunction):
        spatial = d0
        d0 = TimeFunction(lambda t, x, y: spatial(x, y), name="d0")
    if _sampling(sampling).space == "nodal":
        return d0.nodal_values(mesh, 0.0).astype(float)
    b = d0.load(mesh, X, 0.0)
    if not np.any(b):
        return np.zeros(X.ndofs)
    return mass_operator(mesh, X, solvers.method, solvers.pcg).solve(b)


# --- elliptic sub-solve -----------------------------------------------------

def solve_elliptic(mesh, params, d_coeffs, load_l, solvers=DEFAULT_SOLVERS, x0=None):
    """Discrete elliptic solution operator: ``phi_h`` in V_h from ``d`` in X_h and a load."""
    V, X = dirichlet_space(mesh), free_space(mesh)
    rhs = params.beta * (assemble_mass(mesh, X, V) @ d_coeffs) + load_l
    op = elliptic_operator(mesh, params.alpha, params.beta, solvers.method, solvers.pcg)
    return op.solve(rhs, x0)


# --- one interval -----------------------------------------------------------

def _mass_solve(mesh, vec, solvers):
    if not np.any(vec):
        return np.zeros_like(vec)
    X = free_space(mesh)
    return mass_operator(mesh, X, solvers.method, solvers.pcg).solve(vec)


def _coupled_step(mesh, params, tau, prev, load_v, rhs_x, mode, solvers, c, embed_coef):
    """Shared interval kernel for the forward and the backward sweep.

    Solves ``alpha K u + beta M u = c * M_VX w + load_v`` coupled with
    ``(1+q) w = prev + embed_coef * E u + g`` where ``g = M_X^{-1} rhs_x``.
    Forward: ``c = beta``, ``embed_coef = q``. Adjoint: ``c = beta/delta``,
    ``embed_coef = tau beta``. In both cases ``c * embed_coef = beta q``, so
    the iteration map is ``w -> (prev + q E Phi_h(w) + g) / (1+q)``.
    """
    V, X = dirichlet_space(mesh), free_space(mesh)
    q = params.beta / params.delta * tau
    g = _mass_solve(mesh, rhs_x, solvers)
    M_VX = assemble_mass(mesh, X, V)
    info = StepInfo(contraction_bound=params.contraction_factor(tau))

    if mode.kind == "monolithic":
        # eliminate w: (alpha K + beta/(1+q) M) u = load_v + c/(1+q) M_VX (prev + g)
        op = elliptic_operator(mesh, params.alpha, params.beta / (1.0 + q), solvers.method, solvers.pcg)
        u = op.solve(load_v + c / (1.0 + q) * (M_VX @ (prev + g)))
        w = (prev + embed_coef * V.embed(u) + g) / (1.0 + q)
        return u, w, info

    op = elliptic_operator(mesh, params.alpha, params.beta, solvers.method, solvers.pcg)
    M_X = assemble_mass(mesh, X, X)

    def norm(v):
        return np.sqrt(max(v @ (M_X @ v), 0.0))

    w = prev.copy()
    u = op.solve(c * (M_VX @ w) + load_v)
    last = None
    for k in range(1, FIXED_POINT_CAP + 1):
        w_new = (prev + embed_coef * V.embed(u) + g) / (1.0 + q)
        inc = norm(w_new - w)
        if last is not None and last > 0:
            info.ratios.append(inc / last)
        last = inc
        w = w_new
        u = op.solve(c * (M_VX @ w) + load_v, u)
        info.iterations = k
        # a posteriori bound ||w - w*|| <= r/(1-r) inc, r the observed ratio capped by the bound
        r = min(info.ratios[-1], info.contraction_bound) if info.ratios else info.contraction_bound
        scale = max(1.0, norm(w))
        if inc * max(1.0, r / (1.0 - r)) <= mode.tol * scale or inc <= _ROUNDOFF * scale:
            return u, w, info
    raise FixedPointDivergence(
        f"fixed-point iteration exceeded {FIXED_POINT_CAP} iterations "
        f"(last increment {last:.3e}, contraction bound {info.contraction_bound:.3f})"
    )


def step_interval(mesh, params, grid, m, d_prev, load_l_m, f_int_m=None, mode=FIXED_POINT,
                  solvers=DEFAULT_SOLVERS):
    """Advance one interval. Returns ``(phi_m, d_m, info)``.

    ``load_l_m`` is the V_h load of the interval-averaged source and
    ``f_int_m`` the X_h load of ``int_{I_m} f dt`` (zeros when absent).
    """
    tau = grid.taus[m - 1]
    X = free_space(mesh)
    rhs_x = np.zeros(X.ndofs) if f_int_m is None else np.asarray(f_int_m, dtype=float)
    q = params.beta / params.delta * tau
    return _coupled_step(mesh, params, tau, np.asarray(d_prev, dtype=float), load_l_m, rhs_x,
                         mode, solvers, c=params.beta, embed_coef=q)


@dataclass
class StateSolution:
    phi: SpaceTimeField
    d: SpaceTimeField
    steps: list
    loads: np.ndarray  # V_h interval-average loads of l
    f_int: np.ndarray  # X_h loads of int_{I_m} f

    def max_ratio_excess(self):
        """Largest observed contraction ratio minus its theoretical bound."""
        worst = -np.inf
        for s in self.steps:
            if s.ratios:
                worst = max(worst, max(s.ratios) - s.contraction_bound)
        return worst


def solve_state(mesh, params, grid, l, d0=None, f=None, mode=FIXED_POINT, sampling=QUADRATURE,
                solvers=DEFAULT_SOLVERS) -> StateSolution:
    """Forward sweep over all intervals starting from ``P_X d0``.

    ``l`` may be a ``TimeFunction``/callable (loads per ``sampling``), a
    ``SpaceTimeField`` on V_h (loads ``M_V l_m``) or an (M, ndofs) load
    array. ``f`` takes the same forms on X_h and adds ``(f, lambda)``.
    """
    if not np.isclose(grid.T, params.T):
        raise ValueError(f"time grid ends at {grid.T}, parameters say T = {params.T}")
    V, X = dirichlet_space(mesh), free_space(mesh)
    loads = interval_loads(mesh, V, grid, l, sampling)
    f_int = interval_loads(mesh, X, grid, f, sampling) * grid.taus[:, None]
    d_start = initial_value(mesh, d0, solvers, sampling)
    phi = np.zeros((grid.M, V.ndofs))
    d = np.zeros((grid.M, X.ndofs))
    steps = []
    prev = d_start
    for m in range(1, grid.M + 1):
        phi[m - 1], d[m - 1], info = step_interval(
            mesh, params, grid, m, prev, loads[m - 1], f_int[m - 1], mode, solvers
        )
        prev = d[m - 1]
        steps.append(info)
    return StateSolution(
        SpaceTimeField(grid, V, phi),
        SpaceTimeField(grid, X, d, initial_trace=d_start),
        steps,
        loads,
        f_int,
    )


# --- diagnostics --------------------------------------------------------------

@dataclass
class StabilityReport:
    max_d_norm: float
    slacks: np.ndarray  # per step: bound minus ||d_m||
    jump_sum: float

    @property
    def min_slack(self):
        return float(self.slacks.min()) if self.slacks.size else 0.0


def _dual_norm(op, b):
    """L2 norm of the Riesz representative of the load ``b``."""
    if not np.any(b):
        return 0.0
    return float(np.sqrt(max(b @ op.solve(b), 0.0)))


def stability_report(sol: StateSolution, params, solvers=DEFAULT_SOLVERS) -> StabilityReport:
    """Evaluate the per-step bound ``||d_m|| <= ||d_{m-1}|| + tau/delta ||lbar_m|| + ||int f||``.

    Source norms are those of the L2 projections of the data onto the
    discrete spaces, which is what the discrete scheme sees.
    """
    d = sol.d
    mesh = d.space.mesh
    V, X = dirichlet_space(mesh), free_space(mesh)
    MX = assemble_mass(mesh, X, X)
    opV = mass_operator(mesh, V, solvers.method, solvers.pcg)
    opX = mass_operator(mesh, X, solvers.method, solvers.pcg)
    taus = d.grid.taus
    traj = np.vstack([d.initial_trace[None, :], d.coeffs])
    norms = np.sqrt(np.maximum(np.einsum("mi,mi->m", traj, (MX @ traj.T).T), 0.0))
    slacks = np.empty(d.grid.M)
    for m in range(d.grid.M):
        bound = norms[m] + taus[m] / params.delta * _dual_norm(opV, sol.loads[m]) + _dual_norm(opX, sol.f_int[m])
        slacks[m] = bound - norms[m + 1]
    jumps = np.diff(traj, axis=0)
    jump_sq = np.einsum("mi,mi->m", jumps, (MX @ jumps.T).T)
    return StabilityReport(float(norms[1:].max()) if d.grid.M else 0.0, slacks, float(np.sum(jump_sq / taus)))


def monolithic_dense_step(mesh, params, tau, d_prev, load_l, f_int=None):
    """Brute-force oracle: dense block solve of one interval over all dofs."""
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
    A[:nv, nv:] = -params.beta * MVX
    A[nv:, :nv] = -q * MXV
    A[nv:, nv:] = (1.0 + q) * MX
    rhs = np.concatenate([load_l, MX @ d_prev + (0.0 if f_int is None else f_int)])
    sol = dense_solve(A, rhs)
    return sol[:nv], sol[nv:]
