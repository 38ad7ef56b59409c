"""Time grids, space-time coefficient histories and analytic data."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import FeSpace, Mesh, assemble_mass, evaluate_spatial, free_space, load_from_quadrature_values
from .quadrature import DUNAVANT5, TriangleRule


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Partition ``0 = t_0 < t_1 < ... < t_M = T``; interval ``m`` is ``(t_{m-1}, t_m]``."""

    breakpoints: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.breakpoints, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("a time grid needs at least two breakpoints")
        if t[0] != 0.0:
            raise ValueError("time grids start at t_0 = 0")
        if np.any(np.diff(t) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "breakpoints", t)

    @classmethod
    def uniform(cls, T, M):
        if M < 1:
            raise ValueError("need at least one time interval")
        return cls(np.linspace(0.0, T, int(M) + 1))

    @property
    def M(self):
        return self.breakpoints.size - 1

    @property
    def T(self):
        return float(self.breakpoints[-1])

    @property
    def taus(self):
        return np.diff(self.breakpoints)

    @property
    def tau(self):
        return float(self.taus.max())

    def interval(self, m):
        """Endpoints of interval ``m`` (1-based)."""
        return float(self.breakpoints[m - 1]), float(self.breakpoints[m])


@dataclass(eq=False)
class SpaceTimeField:
    """Piecewise constant in time, P1 in space.

    ``coeffs[m-1]`` holds the dof vector on interval ``m``. d-type fields may
    carry ``initial_trace``, the FreeP1 start value ``d_{tau h, 0}``.
    """

    grid: TimeGrid
    space: FeSpace
    coeffs: np.ndarray
    initial_trace: np.ndarray | None = None

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.grid.M, self.space.ndofs):
            raise ValueError(
                f"coefficient array {self.coeffs.shape} does not match "
                f"(M, ndofs) = {(self.grid.M, self.space.ndofs)}"
            )

    @classmethod
    def zeros(cls, grid, space):
        return cls(grid, space, np.zeros((grid.M, space.ndofs)))

    def copy(self):
        trace = None if self.initial_trace is None else self.initial_trace.copy()
        return SpaceTimeField(self.grid, self.space, self.coeffs.copy(), trace)

    def value_at(self, t):
        """Coefficients at time ``t`` in ``(0, T]`` (left-continuous)."""
        m = int(np.searchsorted(self.grid.breakpoints, t, side="left"))
        m = min(max(m, 1), self.grid.M)
        return self.coeffs[m - 1]

    def jumps(self):
        """``[v]_m = v_{m+1} - v_m`` for m = 1..M-1."""
        return np.diff(self.coeffs, axis=0)

    def nodal(self):
        """Coefficients extended to all mesh nodes."""
        return self.space.embed(self.coeffs)

    def _like(self, coeffs):
        return SpaceTimeField(self.grid, self.space, coeffs)

    def __add__(self, other):
        return self._like(self.coeffs + other.coeffs)

    def __sub__(self, other):
        return self._like(self.coeffs - other.coeffs)

    def __mul__(self, s):
        return self._like(self.coeffs * s)

    __rmul__ = __mul__

    def __neg__(self):
        return self._like(-self.coeffs)


def sigma_inner(u: SpaceTimeField, v: SpaceTimeField) -> float:
    """Space-time L2 product of two piecewise constant fields on one space."""
    M = assemble_mass(u.space.mesh, u.space, u.space)
    return float(np.sum(u.grid.taus * np.einsum("mi,mi->m", u.coeffs, (M @ v.coeffs.T).T)))


def sigma_norm(u: SpaceTimeField) -> float:
    return float(np.sqrt(max(sigma_inner(u, u), 0.0)))


def field_loads(fld: SpaceTimeField, test: FeSpace) -> np.ndarray:
    """Per-interval vectors ``(v_m, psi_i)`` for ``psi_i`` in ``test``; shape (M, ndofs)."""
    A = assemble_mass(test.mesh, fld.space, test)
    return (A @ fld.coeffs.T).T


def _nodal_load(mesh, space, values):
    return assemble_mass(mesh, free_space(mesh), space) @ values


class TimeFunction:
    """Callable ``f(t, x, y)`` on ``[0, T] x closure(Omega)``.

    Subclasses may speed up evaluation at quadrature points; the generic path
    calls the function on arrays.
    """

    def __init__(self, fn, name=None, smooth=True):
        self.fn = fn
        self.name = name or getattr(fn, "__name__", "f")
        self.smooth = smooth

    def __call__(self, t, x, y):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.fn(t, x, y), dtype=float), np.broadcast(x, y).shape)

    def at(self, t):
        return lambda x, y: self(t, x, y)

    def quad_values(self, mesh: Mesh, t, rule: TriangleRule = DUNAVANT5):
        pts, _ = mesh.quadrature_points(rule)
        return self(t, pts[..., 0], pts[..., 1])

    def nodal_values(self, mesh: Mesh, t):
        return self(t, mesh.nodes[:, 0], mesh.nodes[:, 1])

    def load(self, mesh, space, t, spatial="quadrature"):
        """Vector ``(f(t), psi_i)``; ``spatial="nodal"`` integrates the P1 interpolant."""
        if spatial == "nodal":
            return _nodal_load(mesh, space, self.nodal_values(mesh, t))
        return load_from_quadrature_values(mesh, space, self.quad_values(mesh, t))

    def __repr__(self):
        return f"{type(self).__name__}({self.name})"


@dataclass(eq=False)
class SeparableFunction(TimeFunction):
    """Sum of products ``sum_k space_k(x, y) * time_k(t)``.

    Spatial factors are evaluated once per mesh and quadrature rule.
    """

    terms: list
    name: str = "separable"
    smooth: bool = True
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.fn = self._evaluate

    def _evaluate(self, t, x, y):
        return sum(s(x, y) * g(t) for s, g in self.terms)

    def _spatial(self, mesh, rule):
        key = (id(mesh), id(rule))
        hit = self._cache.get(key)
        if hit is None or hit[0] is not mesh:
            pts, _ = mesh.quadrature_points(rule)
            vals = [evaluate_spatial(s, pts[..., 0], pts[..., 1]) for s, _ in self.terms]
            hit = (mesh, rule, vals, {})
            self._cache[key] = hit
        return hit

    def quad_values(self, mesh, t, rule=DUNAVANT5):
        _, _, vals, _ = self._spatial(mesh, rule)
        return sum(v * float(g(t)) for v, (_, g) in zip(vals, self.terms))

    def _nodal(self, mesh):
        key = (id(mesh), "nodal")
        hit = self._cache.get(key)
        if hit is None or hit[0] is not mesh:
            x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
            hit = (mesh, [evaluate_spatial(s, x, y) for s, _ in self.terms], {})
            self._cache[key] = hit
        return hit

    def nodal_values(self, mesh, t):
        _, vals, _ = self._nodal(mesh)
        return sum(v * float(g(t)) for v, (_, g) in zip(vals, self.terms))

    def load(self, mesh, space, t, spatial="quadrature"):
        if spatial == "nodal":
            _, vals, loads = self._nodal(mesh)
            make = lambda v: _nodal_load(mesh, space, v)  # noqa: E731
        else:
            _, _, vals, loads = self._spatial(mesh, DUNAVANT5)
            make = lambda v: load_from_quadrature_values(mesh, space, v)  # noqa: E731
        if space.kind not in loads:
            loads[space.kind] = [make(v) for v in vals]
        return sum(b * float(g(t)) for b, (_, g) in zip(loads[space.kind], self.terms))


def as_time_function(f, name=None):
    """Wrap callables, constants and ``None`` as ``TimeFunction``."""
    if f is None:
        return None
    if isinstance(f, TimeFunction):
        return f
    if np.isscalar(f):
        c = float(f)
        return SeparableFunction([(lambda x, y: c, lambda t: 1.0)], name=name or repr(c))
    return TimeFunction(f, name=name)


ZERO = SeparableFunction([(lambda x, y: 0.0, lambda t: 0.0)], name="zero")
