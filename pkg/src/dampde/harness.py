"""Manufactured solutions, space-time error norms and convergence studies."""

from __future__ import annotations

import csv
import enum
import io
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .fields import SeparableFunction, SpaceTimeField, TimeFunction, TimeGrid, as_time_function
from .forward import DEFAULT_SOLVERS, FIXED_POINT, ModelParams, Solvers, StepMode, solve_state, stability_report
from .mesh import assemble_mass, build_unit_square_mesh, free_space
from .optimize import ControlProblem, MaxIterExceeded, OptimizerConfig, solve_ocp
from .quadrature import DUNAVANT5, NODAL, QUADRATURE, Sampling, TriangleRule, sampling as _sampling

log = logging.getLogger(__name__)

PI = np.pi


def _bump(x, y):
    return np.sin(PI * x) * np.sin(PI * y)


@dataclass(eq=False)
class ManufacturedCase:
    """Closed-form solution of the coupled system on the unit square.

    With ``s = sin(pi x) sin(pi y)`` and ``c = beta / (beta + delta)``:
    ``phi = s e^t``, ``d = c s (e^t - e^{-beta t / delta})``, ``d0 = 0`` and
    ``l = -alpha lap(phi) + beta (phi - d)``. For the control problem the
    desired states are ``phi`` and ``d``, the shift is ``l_d = l``, and the
    exact optimal control is ``l`` itself with vanishing adjoint.
    """

    params: ModelParams = field(default_factory=ModelParams)
    alpha_l: float = 1.0

    def __post_init__(self):
        p = self.params
        self.rate = p.beta / p.delta
        self.c = p.beta / (p.beta + p.delta)
        c, k, a, b = self.c, self.rate, p.alpha, p.beta
        self.phi = SeparableFunction([(_bump, np.exp)], name="phi")
        self.d = SeparableFunction([(_bump, lambda t: c * (np.exp(t) - np.exp(-k * t)))], name="d")
        self.l = SeparableFunction(
            [(_bump, lambda t: np.exp(t) * (b + 2 * a * PI**2) - b * c * (np.exp(t) - np.exp(-k * t)))],
            name="l",
        )
        self.d0 = None

    # analytic derivatives, written out independently of the formula for l
    def dt_d(self, t, x, y):
        return self.c * _bump(x, y) * (np.exp(t) + self.rate * np.exp(-self.rate * t))

    def laplace_phi(self, t, x, y):
        return -2 * PI**2 * _bump(x, y) * np.exp(t)

    def ode_residual(self, t, x, y):
        return self.dt_d(t, x, y) + self.rate * (self.d(t, x, y) - self.phi(t, x, y))

    def elliptic_residual(self, t, x, y):
        p = self.params
        return (
            -p.alpha * self.laplace_phi(t, x, y)
            + p.beta * self.phi(t, x, y)
            - p.beta * self.d(t, x, y)
            - self.l(t, x, y)
        )

    def check_invariants(self, samples=100, seed=0):
        """Largest ODE and elliptic residuals at random points of ``[0,T] x [0,1]^2``."""
        rng = np.random.default_rng(seed)
        t = rng.uniform(0, self.params.T, samples)
        x, y = rng.uniform(0, 1, (2, samples))
        return (
            float(np.max(np.abs(self.ode_residual(t, x, y)))),
            float(np.max(np.abs(self.elliptic_residual(t, x, y)))),
        )

    def control_problem(self, mesh, grid, sampling=NODAL, mode=FIXED_POINT, solvers=DEFAULT_SOLVERS, use_ld=True):
        return ControlProblem(
            mesh, grid, self.params, self.alpha_l,
            desired_phi=self.phi, desired_d=self.d, control_shift=self.l if use_ld else None, d0=self.d0,
            sampling=sampling, mode=mode, solvers=solvers,
        )


def spacetime_l2_error(fld: SpaceTimeField, exact, sampling: Sampling | str = QUADRATURE,
                       rule: TriangleRule = DUNAVANT5) -> float:
    """``||exact - fld||`` in L2(0,T; L2(Omega)).

    The time integral uses the rule of ``sampling`` on each interval. Under
    ``"quadrature"`` spatial sampling the space integral is taken with
    ``rule`` at the physical quadrature points; under ``"nodal"`` the exact
    function is replaced by its P1 interpolant and integrated with the mass
    matrix.
    """
    smp = _sampling(sampling)
    mesh = fld.space.mesh
    exact = as_time_function(exact) if exact is not None else None
    nodal = fld.nodal()
    grid = fld.grid
    total = 0.0
    if smp.space == "nodal":
        MX = assemble_mass(mesh, free_space(mesh), free_space(mesh))
    else:
        P = mesh.interpolation_at_quadrature(rule)
        _, w = mesh.quadrature_points(rule)
        w = w.ravel()
    for m in range(1, grid.M + 1):
        a, b = grid.interval(m)
        u = nodal[m - 1] if smp.space == "nodal" else P @ nodal[m - 1]
        for wq, t in zip(smp.time.weights, smp.time.nodes(a, b)):
            if smp.space == "nodal":
                e = u if exact is None else exact.nodal_values(mesh, t) - u
                total += (b - a) * wq * (e @ (MX @ e))
            else:
                e = u if exact is None else exact.quad_values(mesh, t, rule).ravel() - u
                total += (b - a) * wq * np.sum(w * e * e)
    return float(np.sqrt(max(total, 0.0)))


def eoc(errors, resolutions):
    """Experimental orders ``ln(e_{i-1}/e_i) / ln(r_{i-1}/r_i)``."""
    e = np.asarray(errors, dtype=float)
    r = np.asarray(resolutions, dtype=float)
    if e.shape != r.shape or e.ndim != 1:
        raise ValueError("errors and resolutions must be equal-length sequences")
    if e.size < 2:
        return []
    if np.any(~(e > 0)) or np.any(~(r > 0)):
        raise ValueError("errors and resolutions must be positive")
    return list(np.log(e[:-1] / e[1:]) / np.log(r[:-1] / r[1:]))


class StudyMode(enum.Enum):
    TIME = "time"
    SPACE = "space"
    OCP_TIME = "ocp-time"
    OCP_SPACE = "ocp-space"

    @property
    def is_ocp(self):
        return self in (StudyMode.OCP_TIME, StudyMode.OCP_SPACE)

    @property
    def refines_time(self):
        return self in (StudyMode.TIME, StudyMode.OCP_TIME)


@dataclass
class StudyPlan:
    """A sweep over ``M`` (time modes, ``fixed`` is ``n``) or ``n`` (space modes, ``fixed`` is ``M``)."""

    mode: StudyMode
    fixed: int
    sweep: list
    case: ManufacturedCase = field(default_factory=ManufacturedCase)
    sampling: Sampling = NODAL
    step_mode: StepMode = FIXED_POINT
    solvers: Solvers = DEFAULT_SOLVERS
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    threads: int | None = 1
    use_ld: bool = True

    def __post_init__(self):
        self.mode = StudyMode(self.mode)
        self.sampling = _sampling(self.sampling)
        self.sweep = [int(v) for v in self.sweep]
        if not self.sweep:
            raise ValueError("empty sweep")
        if any(b <= a for a, b in zip(self.sweep, self.sweep[1:])):
            raise ValueError("sweep values must be strictly increasing")
        if self.fixed < 1 or self.sweep[0] < 1:
            raise ValueError("mesh and grid sizes must be positive")

    def cells(self):
        if self.mode.refines_time:
            return [(self.fixed, M) for M in self.sweep]
        return [(n, self.fixed) for n in self.sweep]


COLUMNS = [
    "mode", "n", "M", "tau", "h_over_sqrt2", "err_phi", "eoc_phi", "err_d", "eoc_d",
    "err_l", "eoc_l", "r_vd", "cg_iters", "seconds",
]


@dataclass
class CellDiagnostics:
    min_slack: float = math.nan
    ratio_excess: float = -math.inf
    r_vd: float | None = None
    r_vd_bound: float | None = None
    cg_iters: int | None = None
    J: float | None = None
    error: str | None = None

    @property
    def ok(self):
        if self.error is not None:
            return False
        if not self.min_slack >= -1e-10 or not self.ratio_excess <= 1e-8:
            return False
        return self.r_vd is None or self.r_vd <= self.r_vd_bound


@dataclass
class StudyReport:
    plan: StudyPlan
    rows: list
    diagnostics: list

    @property
    def failures(self):
        return [(r["n"], r["M"], d.error) for r, d in zip(self.rows, self.diagnostics) if d.error]

    def column(self, key):
        return [r[key] for r in self.rows]


def _run_cell(plan: StudyPlan, n, M):
    case = plan.case
    mesh = build_unit_square_mesh(n)
    grid = TimeGrid.uniform(case.params.T, M)
    row = dict.fromkeys(COLUMNS)
    row.update(mode=plan.mode.value, n=n, M=M, tau=grid.tau, h_over_sqrt2=1.0 / n)
    diag = CellDiagnostics()
    t0 = time.perf_counter()
    try:
        if plan.mode.is_ocp:
            problem = case.control_problem(mesh, grid, plan.sampling, plan.step_mode, plan.solvers, plan.use_ld)
            res = solve_ocp(problem, plan.optimizer)
            sol = res.state_solution
            if plan.use_ld:
                row["err_l"] = spacetime_l2_error(res.l, case.l, plan.sampling)
            row["r_vd"] = res.r_vd
            row["cg_iters"] = res.iterations
            diag.r_vd = res.r_vd
            diag.r_vd_bound = 10 * plan.optimizer.cg_rel_tol * res.grad0_norm
            diag.cg_iters = res.iterations
            diag.J = res.J
            diag.ratio_excess = res.contraction_excess
        else:
            sol = solve_state(mesh, case.params, grid, case.l, case.d0,
                              mode=plan.step_mode, sampling=plan.sampling, solvers=plan.solvers)
            diag.ratio_excess = sol.max_ratio_excess()
        if case.phi is not None:
            row["err_phi"] = spacetime_l2_error(sol.phi, case.phi, plan.sampling)
        if case.d is not None:
            row["err_d"] = spacetime_l2_error(sol.d, case.d, plan.sampling)
        diag.min_slack = stability_report(sol, case.params, plan.solvers).min_slack
    except (MaxIterExceeded, ArithmeticError, RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
        log.warning("cell n=%d M=%d failed: %s", n, M, exc)
        diag.error = f"{type(exc).__name__}: {exc}"
    row["seconds"] = time.perf_counter() - t0
    return row, diag


def _fill_eoc(rows, refines_time):
    res = [r["tau"] if refines_time else r["h_over_sqrt2"] for r in rows]
    for key in ("phi", "d", "l"):
        errs = [r[f"err_{key}"] for r in rows]
        for i in range(1, len(rows)):
            a, b = errs[i - 1], errs[i]
            if a is not None and b is not None and a > 0 and b > 0:
                rows[i][f"eoc_{key}"] = eoc([a, b], [res[i - 1], res[i]])[0]


def run_study(plan: StudyPlan) -> StudyReport:
    """Run every cell of ``plan``; rows come back in sweep order.

    Cells are independent and may run on ``plan.threads`` worker threads
    (``None`` uses one per core). A failing cell is recorded in its
    diagnostics and leaves blank error columns.
    """
    cells = plan.cells()
    workers = plan.threads
    if workers is None:
        import os

        workers = os.cpu_count() or 1
    workers = max(1, min(workers, len(cells)))
    if workers == 1:
        out = [_run_cell(plan, n, M) for n, M in cells]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(lambda c: _run_cell(plan, *c), cells))
    rows = [r for r, _ in out]
    _fill_eoc(rows, plan.mode.refines_time)
    return StudyReport(plan, rows, [d for _, d in out])


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, str):
        return v
    v = float(v)
    return "" if math.isnan(v) else f"{v:.6g}"


def report_csv(rows, timings=True) -> str:
    """CSV text with the fixed column order; ``timings=False`` blanks ``seconds``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([_fmt(r.get(k)) if (k != "seconds" or timings) else "" for k in COLUMNS])
    return buf.getvalue()


def write_csv(report_or_rows, path, timings=True):
    rows = report_or_rows.rows if isinstance(report_or_rows, StudyReport) else report_or_rows
    with open(path, "w", newline="") as fh:
        fh.write(report_csv(rows, timings))


def report_series(report: StudyReport):
    """Error series keyed by name as ``(resolutions, errors)`` pairs."""
    key = "tau" if report.plan.mode.refines_time else "h_over_sqrt2"
    out = {}
    for name in ("phi", "d", "l"):
        pts = [(r[key], r[f"err_{name}"]) for r in report.rows if r[f"err_{name}"] is not None]
        if pts:
            out[f"err_{name}"] = tuple(map(list, zip(*pts)))
    return out


_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]


def emit_svg_loglog(series, xlabel="resolution", ylabel="error", title="", width=480, height=360):
    """Standalone SVG 1.1 log-log plot with slope-1 and slope-2 guide lines.

    ``series`` maps a label to ``(xs, ys)``, or is a ``StudyReport``. Both
    axes use the same pixel length per decade, so a polyline of slope ``k``
    in data space is drawn with slope ``k`` on screen.
    """
    if isinstance(series, StudyReport):
        if not xlabel or xlabel == "resolution":
            xlabel = "tau" if series.plan.mode.refines_time else "h/sqrt(2)"
        series = report_series(series)
    if not series:
        raise ValueError("nothing to plot")
    data = {}
    for name, (xs, ys) in series.items():
        xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
        if xs.size == 0 or xs.shape != ys.shape:
            raise ValueError(f"series {name!r} is empty or ragged")
        if np.any(~(xs > 0)) or np.any(~(ys > 0)):
            raise ValueError(f"series {name!r} has nonpositive values")
        data[name] = (np.log10(xs), np.log10(ys))
    lx = np.concatenate([v[0] for v in data.values()])
    ly = np.concatenate([v[1] for v in data.values()])
    margin = 60
    xlo, xhi = math.floor(lx.min()), math.ceil(lx.max())
    ylo, yhi = math.floor(ly.min()), math.ceil(ly.max())
    xhi, yhi = max(xhi, xlo + 1), max(yhi, ylo + 1)
    scale = min((width - 2 * margin) / (xhi - xlo), (height - 2 * margin) / (yhi - ylo))

    def px(u, v):
        return margin + (u - xlo) * scale, height - margin - (v - ylo) * scale

    def pts(us, vs):
        return " ".join(f"{a:.3f},{b:.3f}" for a, b in (px(u, v) for u, v in zip(us, vs)))

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
        f'data-log10-xmin="{xlo}" data-log10-ymin="{ylo}" data-px-per-decade="{scale:.6g}" data-margin="{margin}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>')
    for k in range(xlo, xhi + 1):
        x, y = px(k, ylo)
        out.append(f'<line x1="{x:.3f}" y1="{y:.3f}" x2="{x:.3f}" y2="{y + 5:.3f}" stroke="black"/>')
        out.append(f'<text x="{x:.3f}" y="{y + 18:.3f}" text-anchor="middle" font-size="11">1e{k}</text>')
    for k in range(ylo, yhi + 1):
        x, y = px(xlo, k)
        out.append(f'<line x1="{x - 5:.3f}" y1="{y:.3f}" x2="{x:.3f}" y2="{y:.3f}" stroke="black"/>')
        out.append(f'<text x="{x - 8:.3f}" y="{y + 4:.3f}" text-anchor="end" font-size="11">1e{k}</text>')
    x0, y0 = px(xlo, ylo)
    x1, y1 = px(xhi, yhi)
    out.append(f'<polyline class="axes" points="{x0:.3f},{y1:.3f} {x0:.3f},{y0:.3f} {x1:.3f},{y0:.3f}" '
               'fill="none" stroke="black"/>')
    out.append(f'<text x="{(x0 + x1) / 2:.3f}" y="{height - 15}" text-anchor="middle" font-size="12">{xlabel}</text>')
    out.append(f'<text x="15" y="{(y0 + y1) / 2:.3f}" text-anchor="middle" font-size="12" '
               f'transform="rotate(-90 15 {(y0 + y1) / 2:.3f})">{ylabel}</text>')
    # guides through the first point of the first series
    gu, gv = next(iter(data.values()))
    u0, v0 = gu[0], gv[0]
    us = np.array([lx.min(), lx.max()])
    for slope, dash in ((1, "6,3"), (2, "2,3")):
        out.append(f'<polyline class="guide" data-slope="{slope}" points="{pts(us, v0 + slope * (us - u0))}" '
                   f'fill="none" stroke="gray" stroke-dasharray="{dash}"/>')
    for i, (name, (us_, vs_)) in enumerate(data.items()):
        color = _COLORS[i % len(_COLORS)]
        out.append(f'<polyline class="series" data-label="{name}" points="{pts(us_, vs_)}" '
                   f'fill="none" stroke="{color}" stroke-width="1.5"/>')
        lxp, lyp = width - margin - 80, margin + 16 * i
        out.append(f'<text x="{lxp}" y="{lyp}" font-size="11" fill="{color}">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
