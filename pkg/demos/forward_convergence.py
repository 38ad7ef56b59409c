"""Forward solver on the manufactured solution, then refinement studies.

    python3 demos/forward_convergence.py            # small sizes, seconds
    python3 demos/forward_convergence.py --full     # table sizes, about a minute
"""

import argparse
from pathlib import Path

from dampde import ManufacturedCase, StudyPlan, TimeGrid, build_unit_square_mesh, solve_state, stability_report
from dampde.harness import emit_svg_loglog, report_csv, run_study, spacetime_l2_error

p = argparse.ArgumentParser()
p.add_argument("--full", action="store_true")
p.add_argument("--out", type=Path, default=Path("demo_output"))
args = p.parse_args()
args.out.mkdir(exist_ok=True)

case = ManufacturedCase()
ode, ell = case.check_invariants()
print(f"manufactured residuals: ode {ode:.1e}, elliptic {ell:.1e}")

# a single solve with its diagnostics
mesh = build_unit_square_mesh(32)
grid = TimeGrid.uniform(case.params.T, 64)
sol = solve_state(mesh, case.params, grid, case.l, case.d0)
print(f"n=32 M=64: err_phi {spacetime_l2_error(sol.phi, case.phi, 'nodal'):.4e}, "
      f"err_d {spacetime_l2_error(sol.d, case.d, 'nodal'):.4e}")
its = [s.iterations for s in sol.steps]
print(f"  fixed-point iterations per interval: {min(its)} to {max(its)}")
print(f"  min stability slack {stability_report(sol, case.params).min_slack:.3e}, "
      f"max contraction excess {sol.max_ratio_excess():.3e}")

# time refinement at fixed mesh: first order; space refinement at fine time grid: second order
if args.full:
    plans = [StudyPlan("time", 256, [8, 32, 128]), StudyPlan("space", 512, [8, 16, 32, 64])]
else:
    plans = [StudyPlan("time", 64, [4, 8, 16, 32]), StudyPlan("space", 256, [4, 8, 16, 32])]
for plan in plans:
    rep = run_study(plan)
    print(report_csv(rep.rows, timings=False))
    svg = args.out / f"forward_{plan.mode.value}.svg"
    svg.write_text(emit_svg_loglog(rep, xlabel="tau" if plan.mode.refines_time else "h/sqrt(2)",
                                   title=f"{plan.mode.value} refinement"))
    print(f"wrote {svg}")
