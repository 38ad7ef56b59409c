"""Quadrature rules on the reference triangle and on the unit time interval."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import roots_jacobi


@dataclass(frozen=True)
class TriangleRule:
    """Barycentric points and weights on the reference triangle.

    Weights are normalized to sum to one, so the integral over a physical
    triangle of area ``A`` is ``A * sum(w * f(x_q))``.
    """

    bary: np.ndarray  # (nq, 3)
    weights: np.ndarray  # (nq,)
    degree: int

    def points(self, vertices):
        """Physical points for triangles with ``vertices`` of shape (nt, 3, 2).

        Returns an array of shape (nt, nq, 2).
        """
        return np.einsum("qk,tkd->tqd", self.bary, vertices)


@dataclass(frozen=True)
class TimeRule:
    """Points and weights on [0, 1]; interval ``(a, b]`` maps to ``a + s (b - a)``."""

    points: np.ndarray
    weights: np.ndarray
    name: str

    def nodes(self, a, b):
        return a + self.points * (b - a)


def _dunavant5():
    r15 = np.sqrt(15.0)
    a1, b1 = (9.0 - 2.0 * r15) / 21.0, (6.0 + r15) / 21.0
    a2, b2 = (9.0 + 2.0 * r15) / 21.0, (6.0 - r15) / 21.0
    w1, w2 = (155.0 + r15) / 1200.0, (155.0 - r15) / 1200.0
    bary = [(1 / 3, 1 / 3, 1 / 3)]
    weights = [9.0 / 40.0]
    for a, b, w in ((a1, b1, w1), (a2, b2, w2)):
        bary += [(a, b, b), (b, a, b), (b, b, a)]
        weights += [w] * 3
    return TriangleRule(np.array(bary), np.array(weights), 5)


def collapsed_gauss_rule(npts):
    """Conical product rule with ``npts**2`` positive-weight points.

    Gauss-Jacobi in the collapsed direction absorbs the Duffy Jacobian;
    the rule integrates polynomials of degree ``2 * npts - 1`` exactly.
    """
    s, ws = np.polynomial.legendre.leggauss(npts)
    s = 0.5 * (s + 1.0)
    ws = 0.5 * ws
    r, wr = roots_jacobi(npts, 1.0, 0.0)  # weight (1 - r)
    r = 0.5 * (r + 1.0)
    wr = wr / 4.0  # interval map and (1 - r)/2 weight
    R, S = np.meshgrid(r, s, indexing="ij")
    W = np.outer(wr, ws)
    x = R.ravel()
    y = ((1.0 - R) * S).ravel()
    w = 2.0 * W.ravel()  # reference area 1/2 -> normalized weights
    bary = np.column_stack([1.0 - x - y, x, y])
    return TriangleRule(bary, w, 2 * npts - 1)


DUNAVANT5 = _dunavant5()
TRIANGLE_DEG7 = collapsed_gauss_rule(4)


def gauss_time_rule(npts=4):
    x, w = np.polynomial.legendre.leggauss(npts)
    return TimeRule(0.5 * (x + 1.0), 0.5 * w, f"gauss{npts}")


GAUSS_TIME = gauss_time_rule(4)

# One-point rule sampling the right end of each interval. Interval averages
# become point values at t_m and space-time norms become sums of nodal
# errors weighted by the interval lengths.
ENDPOINT_TIME = TimeRule(np.array([1.0]), np.array([1.0]), "endpoint")


def time_rule(name):
    """Look up a time rule by name: ``"gauss"`` (4-point Gauss) or ``"endpoint"``."""
    if isinstance(name, TimeRule):
        return name
    if name == "gauss":
        return GAUSS_TIME
    if name == "endpoint":
        return ENDPOINT_TIME
    if name.startswith("gauss") and name[5:].isdigit():
        return gauss_time_rule(int(name[5:]))
    raise ValueError(f"unknown time rule {name!r}")


@dataclass(frozen=True)
class Sampling:
    """How analytic data enters the discrete problem and the error norms.

    ``time`` integrates over each interval. ``space`` is ``"quadrature"``
    (integrate the data against P1 functions with a triangle rule) or
    ``"nodal"`` (replace the data by its P1 nodal interpolant, then integrate
    exactly).
    """

    time: TimeRule
    space: str = "quadrature"

    def __post_init__(self):
        if self.space not in ("quadrature", "nodal"):
            raise ValueError(f"unknown spatial sampling {self.space!r}")
        object.__setattr__(self, "time", time_rule(self.time))

    @property
    def name(self):
        return {("gauss4", "quadrature"): "quadrature", ("endpoint", "nodal"): "nodal"}.get(
            (self.time.name, self.space), f"{self.time.name}/{self.space}"
        )


# Gauss in time, degree-5 rule in space: the Galerkin method as written.
QUADRATURE = Sampling(GAUSS_TIME, "quadrature")
# Data sampled at t_m and replaced by nodal interpolants, as with
# implicit-Euler stepping of interpolated source terms.
NODAL = Sampling(ENDPOINT_TIME, "nodal")


def sampling(name):
    if isinstance(name, Sampling):
        return name
    presets = {"quadrature": QUADRATURE, "nodal": NODAL}
    if name not in presets:
        raise ValueError(f"unknown sampling {name!r}; expected one of {sorted(presets)}")
    return presets[name]
