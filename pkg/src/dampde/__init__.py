"""Space-time finite elements for a linear gradient-enhanced damage model.

dG(0) in time, P1 in space, with a reduced-gradient CG solver for the
tracking-type optimal control problem.
"""

from .adjoint import AdjointSolution, bilinear_form_apply, solve_adjoint
from .fields import SeparableFunction, SpaceTimeField, TimeFunction, TimeGrid, sigma_inner, sigma_norm
from .forward import (
    FIXED_POINT,
    MONOLITHIC,
    FixedPointDivergence,
    ModelParams,
    Solvers,
    StateSolution,
    StepMode,
    solve_elliptic,
    solve_state,
    stability_report,
    step_interval,
)
from .harness import ManufacturedCase, StudyMode, StudyPlan, emit_svg_loglog, eoc, run_study, spacetime_l2_error
from .linalg import NonConvergence, SingularMatrix, SolverConfig, dense_solve, pcg_solve
from .mesh import (
    FeSpace,
    Mesh,
    SpaceKind,
    assemble_load,
    assemble_mass,
    assemble_stiffness,
    build_unit_square_mesh,
    dirichlet_space,
    free_space,
    l2_project,
)
from .optimize import (
    ControlProblem,
    MaxIterExceeded,
    OcpResult,
    OptimizerConfig,
    hessian_apply,
    objective,
    reduced_gradient,
    solve_ocp,
)
from .quadrature import NODAL, QUADRATURE, Sampling

__version__ = "0.1.0"
