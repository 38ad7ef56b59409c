"""Tracking-type optimal control: recover the manufactured control.

    python3 demos/optimal_control.py
"""

from dampde import ManufacturedCase, OptimizerConfig, TimeGrid, build_unit_square_mesh, sigma_norm, solve_ocp
from dampde.harness import spacetime_l2_error
from dampde.optimize import reduced_gradient

case = ManufacturedCase()
mesh = build_unit_square_mesh(32)
grid = TimeGrid.uniform(case.params.T, 32)
problem = case.control_problem(mesh, grid)

res = solve_ocp(problem, OptimizerConfig(cg_rel_tol=1e-10))
for h in res.history:
    print(f"iter {h['iter']:2d}  J {h['J']:.10e}  |grad| {h['grad']:.3e}")
print(f"converged={res.converged} after {res.iterations} CG iterations")
print(f"control error {spacetime_l2_error(res.l, case.l, 'nodal'):.4e}")
print(f"state errors phi {spacetime_l2_error(res.phi, case.phi, 'nodal'):.4e}, "
      f"d {spacetime_l2_error(res.d, case.d, 'nodal'):.4e}")

# the optimality residual alpha_l (l - P l_d) + z is the reduced gradient at the optimum
g = reduced_gradient(problem, res.l)
print(f"optimality residual {res.r_vd:.3e}, recomputed {sigma_norm(g):.3e}")
