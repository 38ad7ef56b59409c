"""Command-line driver: ``dampde <command> [options]``.

Commands
--------
simulate               one forward solve, errors against the exact solution
convergence-time       refine M at fixed n
convergence-space      refine n at fixed M
optimize               one optimal control solve
optimize-convergence   control errors under refinement (``--refine time|space``)
verify                 property suites on small random problems

Exit status is 0 on success, 2 for invalid configuration and 1 for
numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, load_config
from .fields import TimeGrid
from .forward import FixedPointDivergence, solve_state, stability_report
from .harness import COLUMNS, StudyPlan, emit_svg_loglog, report_csv, run_study, spacetime_l2_error
from .linalg import NonConvergence, SingularMatrix
from .mesh import build_unit_square_mesh
from .optimize import MaxIterExceeded, solve_ocp

log = logging.getLogger("dampde")

NUMERICAL_ERRORS = (FixedPointDivergence, NonConvergence, SingularMatrix, MaxIterExceeded, ArithmeticError)


class NumericalFailure(RuntimeError):
    pass


def _int_list(text):
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("list entries must be positive integers")
    return vals


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--out", type=Path, default=None,
                        help="output directory (default: $DAMPDE_OUT or ./results)")
    common.add_argument("--sampling", choices=["nodal", "quadrature"], help="override data sampling")
    common.add_argument("-v", "--verbose", action="store_true")

    study = argparse.ArgumentParser(add_help=False)
    study.add_argument("--svg", action="store_true", help="also write a log-log plot")
    study.add_argument("--threads", type=int, default=None, help="parallel study cells (default: cores)")

    p = argparse.ArgumentParser(prog="dampde", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="forward solve")
    s.add_argument("--n", type=int)
    s.add_argument("--M", type=int)
    s.add_argument("--dump-fields", action="store_true", help="write nodal snapshots per interval")

    s = sub.add_parser("convergence-time", parents=[common, study], help="refine the time grid")
    s.add_argument("--n", type=int, default=None)
    s.add_argument("--m-list", type=_int_list, default=[8, 32, 128])

    s = sub.add_parser("convergence-space", parents=[common, study], help="refine the mesh")
    s.add_argument("--M", type=int, default=None)
    s.add_argument("--n-list", type=_int_list, default=[8, 16, 32, 64])

    s = sub.add_parser("optimize", parents=[common], help="optimal control solve")
    s.add_argument("--n", type=int)
    s.add_argument("--M", type=int)

    s = sub.add_parser("optimize-convergence", parents=[common, study], help="control error study")
    s.add_argument("--refine", choices=["time", "space"], default="time")
    s.add_argument("--n", type=int, default=None)
    s.add_argument("--M", type=int, default=None)
    s.add_argument("--m-list", type=_int_list, default=[8, 32, 128])
    s.add_argument("--n-list", type=_int_list, default=[8, 16, 32])

    s = sub.add_parser("verify", parents=[common], help="run property suites")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--quick", action="store_true", help="fewer random samples")
    return p


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    for key in ("n", "M"):
        v = getattr(args, key, None)
        if v is not None:
            if v < 1:
                raise ConfigError(f"--{key} must be a positive integer")
            setattr(cfg, key, v)
    if getattr(args, "sampling", None):
        cfg.sampling = args.sampling
    return cfg


def _outdir(args):
    out = args.out or Path(os.environ.get("DAMPDE_OUT", "results"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _row(cfg, mode, grid):
    row = dict.fromkeys(COLUMNS)
    row.update(mode=mode, n=cfg.n, M=cfg.M, tau=grid.tau, h_over_sqrt2=1.0 / cfg.n)
    return row


def cmd_simulate(args):
    cfg = _config(args)
    case = cfg.build_case()
    mesh = build_unit_square_mesh(cfg.n)
    grid = TimeGrid.uniform(cfg.params.T, cfg.M)
    sol = solve_state(mesh, cfg.params, grid, case.l, case.d0,
                      mode=cfg.step_mode, sampling=cfg.sampling_rule, solvers=cfg.solvers)
    row = _row(cfg, "simulate", grid)
    if case.phi is not None:
        row["err_phi"] = spacetime_l2_error(sol.phi, case.phi, cfg.sampling_rule)
    if case.d is not None:
        row["err_d"] = spacetime_l2_error(sol.d, case.d, cfg.sampling_rule)
    rep = stability_report(sol, cfg.params, cfg.solvers)
    out = _outdir(args)
    (out / "simulate.csv").write_text(report_csv([row], timings=False))
    if args.dump_fields:
        phi, d = sol.phi.nodal(), sol.d.nodal()
        with open(out / "fields.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["interval", "t", "node", "x", "y", "phi", "d"])
            for m in range(grid.M):
                t = grid.breakpoints[m + 1]
                for k, (x, y) in enumerate(mesh.nodes):
                    w.writerow([m + 1, f"{t:.6g}", k, f"{x:.6g}", f"{y:.6g}", f"{phi[m, k]:.6g}", f"{d[m, k]:.6g}"])
    print(report_csv([row], timings=False), end="")
    log.info("min stability slack %.3e, max ratio excess %.3e", rep.min_slack, sol.max_ratio_excess())
    return 0


def _study(args, cfg, mode, fixed, sweep, name):
    plan = StudyPlan(
        mode, fixed, sweep, case=cfg.build_case(), sampling=cfg.sampling_rule, step_mode=cfg.step_mode,
        solvers=cfg.solvers, optimizer=cfg.optimizer, threads=args.threads, use_ld=cfg.use_ld,
    )
    report = run_study(plan)
    out = _outdir(args)
    text = report_csv(report.rows)
    (out / f"{name}.csv").write_text(text)
    print(text, end="")
    if args.svg:
        try:
            (out / f"{name}.svg").write_text(emit_svg_loglog(report, title=name))
        except ValueError as exc:
            log.warning("no plot written: %s", exc)
    bad = [(r, d) for r, d in zip(report.rows, report.diagnostics) if not d.ok]
    if bad:
        lines = [
            f"n={r['n']} M={r['M']}: error={d.error} min_slack={d.min_slack:.3e} "
            f"ratio_excess={d.ratio_excess:.3e} r_vd={d.r_vd} (bound {d.r_vd_bound})"
            for r, d in bad
        ]
        raise NumericalFailure("study cells failed:\n  " + "\n  ".join(lines))
    return 0


def cmd_convergence_time(args):
    cfg = _config(args)
    return _study(args, cfg, "time", args.n or cfg.n, args.m_list, "convergence_time")


def cmd_convergence_space(args):
    cfg = _config(args)
    return _study(args, cfg, "space", args.M or cfg.M, args.n_list, "convergence_space")


def cmd_optimize_convergence(args):
    cfg = _config(args)
    if args.refine == "time":
        return _study(args, cfg, "ocp-time", args.n or cfg.n, args.m_list, "optimize_convergence_time")
    return _study(args, cfg, "ocp-space", args.M or cfg.M, args.n_list, "optimize_convergence_space")


def cmd_optimize(args):
    cfg = _config(args)
    case = cfg.build_case()
    mesh = build_unit_square_mesh(cfg.n)
    grid = TimeGrid.uniform(cfg.params.T, cfg.M)
    problem = case.control_problem(mesh, grid, cfg.sampling_rule, cfg.step_mode, cfg.solvers, cfg.use_ld)
    res = solve_ocp(problem, cfg.optimizer)
    row = _row(cfg, "optimize", grid)
    if case.phi is not None:
        row["err_phi"] = spacetime_l2_error(res.phi, case.phi, cfg.sampling_rule)
    if case.d is not None:
        row["err_d"] = spacetime_l2_error(res.d, case.d, cfg.sampling_rule)
    if cfg.use_ld and case.phi is not None and case.d is not None:
        row["err_l"] = spacetime_l2_error(res.l, case.l, cfg.sampling_rule)
    row.update(r_vd=res.r_vd, cg_iters=res.iterations)
    out = _outdir(args)
    (out / "optimize.csv").write_text(report_csv([row], timings=False))
    with open(out / "optimize_history.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "J", "grad_norm"])
        for h in res.history:
            w.writerow([h["iter"], f"{h['J']:.6g}", f"{h['grad']:.6g}"])
    print(report_csv([row], timings=False), end="")
    if res.r_vd > 10 * cfg.cg_rel_tol * res.grad0_norm:
        raise NumericalFailure(f"variational discretization residual {res.r_vd:.3e} above bound")
    return 0


def cmd_verify(args):
    from .verify import run_all

    checks = run_all(seed=args.seed, quick=args.quick)
    for c in checks:
        print(c.line())
    failed = [c for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return 1 if failed else 0


COMMANDS = {
    "simulate": cmd_simulate,
    "convergence-time": cmd_convergence_time,
    "convergence-space": cmd_convergence_space,
    "optimize": cmd_optimize,
    "optimize-convergence": cmd_optimize_convergence,
    "verify": cmd_verify,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"dampde: configuration error: {exc}", file=sys.stderr)
        return 2
    except MaxIterExceeded as exc:
        r = exc.result
        print(f"dampde: numerical failure: {exc} (initial gradient {r.grad0_norm:.3e}, "
              f"r_vd {r.r_vd:.3e})", file=sys.stderr)
        return 1
    except (NumericalFailure, *NUMERICAL_ERRORS) as exc:
        print(f"dampde: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
