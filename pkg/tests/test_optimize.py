import numpy as np
import pytest

from dampde.fields import SpaceTimeField, TimeGrid, sigma_inner, sigma_norm
from dampde.forward import ModelParams, solve_state
from dampde.harness import ManufacturedCase, spacetime_l2_error
from dampde.mesh import build_unit_square_mesh
from dampde.optimize import (
    ControlProblem,
    MaxIterExceeded,
    OptimizerConfig,
    hessian_apply,
    objective,
    reduced_gradient,
    solve_ocp,
    zero_control,
)
from dampde.quadrature import NODAL, QUADRATURE
from dampde.verify import gradient_fd_defect, hessian_symmetry_defect, random_control_problem


def _random_field(rng, pb):
    return SpaceTimeField(pb.grid, pb.V, rng.standard_normal((pb.grid.M, pb.V.ndofs)))


def test_validation():
    mesh = build_unit_square_mesh(2)
    with pytest.raises(ValueError):
        ControlProblem(mesh, TimeGrid.uniform(1.0, 2), ModelParams(), alpha_l=0.0)
    with pytest.raises(ValueError):
        OptimizerConfig(cg_rel_tol=0)
    with pytest.raises(ValueError):
        OptimizerConfig(max_cg_iter=0)


def test_objective_trivial_zero():
    pb = ControlProblem(build_unit_square_mesh(3), TimeGrid.uniform(1.0, 3), ModelParams())
    assert objective(pb, zero_control(pb)) == 0.0


@pytest.mark.parametrize("sampling", [QUADRATURE, NODAL])
def test_objective_matches_pointwise_evaluation(sampling):
    rng = np.random.default_rng(30)
    pb = random_control_problem(rng)
    pb.sampling = sampling
    l = _random_field(rng, pb)
    sol = solve_state(pb.mesh, pb.params, pb.grid, l, pb.d0, sampling=sampling)
    ref = 0.5 * (
        spacetime_l2_error(sol.phi, pb.desired_phi, sampling) ** 2
        + spacetime_l2_error(sol.d, pb.desired_d, sampling) ** 2
        + pb.alpha_l * spacetime_l2_error(l, pb.control_shift, sampling) ** 2
    )
    assert objective(pb, l) == pytest.approx(ref, rel=1e-10)


def test_gradient_matches_central_differences():
    rng = np.random.default_rng(31)
    for _ in range(5):
        assert gradient_fd_defect(rng) <= 1e-6


def test_gradient_at_reachable_target():
    rng = np.random.default_rng(32)
    mesh = build_unit_square_mesh(4)
    grid = TimeGrid.uniform(1.0, 4)
    params = ModelParams()
    base = ControlProblem(mesh, grid, params)
    l_star = _random_field(rng, base)
    sol = solve_state(mesh, params, grid, l_star)
    shift = lambda t, x, y: np.cos(x * y + t)  # noqa: E731
    pb = ControlProblem(mesh, grid, params, alpha_l=0.7, desired_phi=sol.phi, desired_d=sol.d, control_shift=shift)
    g = reduced_gradient(pb, l_star)
    expect = 0.7 * (l_star - pb.projected_shift)
    assert sigma_norm(g - expect) <= 1e-10 * sigma_norm(expect)
    # and the tracking part of the objective vanishes there
    assert objective(pb, l_star) == pytest.approx(0.35 * sigma_norm(l_star) ** 2 - 0.7 * sigma_inner(
        l_star, pb.projected_shift) + 0.35 * np.sum(grid.taus * pb._constants[2]), rel=1e-10)


def test_hessian_zero_symmetry_coercivity():
    rng = np.random.default_rng(33)
    pb = random_control_problem(rng)
    assert sigma_norm(hessian_apply(pb, zero_control(pb))) == 0.0
    assert hessian_symmetry_defect(rng) <= 1e-9
    for _ in range(5):
        u = _random_field(rng, pb)
        assert sigma_inner(hessian_apply(pb, u), u) >= pb.alpha_l * sigma_inner(u, u) * (1 - 1e-12)


def test_trivial_problem_has_zero_solution():
    pb = ControlProblem(build_unit_square_mesh(4), TimeGrid.uniform(1.0, 4), ModelParams())
    res = solve_ocp(pb)
    assert res.iterations == 0
    assert not np.any(res.l.coeffs) and res.J == 0.0


def test_cg_monotone_and_converged():
    rng = np.random.default_rng(34)
    pb = random_control_problem(rng)
    cfg = OptimizerConfig(cg_rel_tol=1e-10)
    res = solve_ocp(pb, cfg)
    J = [h["J"] for h in res.history]
    assert all(b <= a + 1e-12 for a, b in zip(J, J[1:]))
    assert res.grad_norm <= 10 * cfg.cg_rel_tol * res.grad0_norm
    assert res.r_vd <= 10 * cfg.cg_rel_tol * res.grad0_norm
    # the incrementally tracked objective agrees with a fresh evaluation
    assert J[-1] == pytest.approx(objective(pb, res.l), rel=1e-9)
    # the optimum beats random perturbations
    for _ in range(3):
        assert objective(pb, res.l + 1e-3 * _random_field(rng, pb)) >= res.J


def test_max_iter_carries_best_iterate():
    rng = np.random.default_rng(35)
    pb = random_control_problem(rng)
    with pytest.raises(MaxIterExceeded) as info:
        solve_ocp(pb, OptimizerConfig(cg_rel_tol=1e-14, max_cg_iter=1))
    res = info.value.result
    assert res.iterations == 1 and not res.converged
    assert res.J < res.history[0]["J"]


def test_manufactured_ocp_is_near_exact_control():
    case = ManufacturedCase()
    mesh = build_unit_square_mesh(16)
    grid = TimeGrid.uniform(1.0, 16)
    res = solve_ocp(case.control_problem(mesh, grid))
    err = spacetime_l2_error(res.l, case.l, NODAL)
    # the exact control has a space-time norm of about 20
    assert err < 1e-2
    assert res.iterations <= 10
