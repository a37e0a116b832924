"""Command-line front end.

Subcommands: solve-state, solve-adjoint, optimize, convergence,
mesh-info.  Exit codes: 0 success, 2 configuration error, 3 solver
failure, 4 optimizer did not reach the requested stationarity (best
iterate artifacts are still written).  With --threads 1 (and in the
current all-serial implementation generally) identical configs produce
identical outputs.
"""

import argparse
import logging
import os
import sys

import numpy as np

from . import adjoint as adj
from . import control as ctrl
from . import state as st
from . import verification as vf
from . import vtkio
from .config import RunConfig
from .errors import ConfigError, NsvoptError, SolverError

log = logging.getLogger("nsvopt")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_OPTIMIZER = 4


def _write_trajectory(cfg, outdir, space, traj, prefix):
    mesh = space.mesh
    for n, snap in enumerate(traj.snapshots):
        if snap is None:
            continue
        if cfg.write_vtk():
            data = {"velocity": vtkio.vertex_velocity(space, snap)}
            press = getattr(traj, "pressures", [None] * len(traj.snapshots))
            if n < len(press) and press[n] is not None:
                data["pressure"] = press[n]
            vtkio.write_vtk(os.path.join(
                outdir, "{}_{:04d}.vtk".format(prefix, n)), mesh, data)
        if cfg.write_fields():
            press = getattr(traj, "pressures", [None] * len(traj.snapshots))
            vtkio.write_field(os.path.join(
                outdir, "{}_{:04d}.nsvfield".format(prefix, n)), snap,
                press[n] if n < len(press) else None)


def cmd_mesh_info(cfg, args):
    mesh = cfg.mesh()
    print("dim={} vertices={} cells={} edges={}".format(
        mesh.dim, mesh.num_vertices, mesh.num_cells, mesh.num_edges))
    print("h={:.17g} volume={:.17g}".format(mesh.h, mesh.volume))
    print("shape_regularity={:.17g} quasi_uniformity={:.17g}".format(
        mesh.shape_regularity, mesh.quasi_uniformity))
    print("boundary_facets={}".format(len(mesh.boundary_facets)))
    return EXIT_OK


def cmd_solve_state(cfg, args):
    data = cfg.problem_data()
    mesh = cfg.mesh()
    space = cfg.space(mesh)
    grid = cfg.grid(data)
    outdir = cfg.output_dir(args.out)
    try:
        traj = st.solve_state(data, space, grid, cfg.forcing(),
                              cfg.solver_options())
    except SolverError as exc:
        log.error("state solve failed: %s", exc)
        return EXIT_SOLVER
    _write_trajectory(cfg, outdir, space, traj, "state")
    for d in traj.diagnostics:
        log.info("step %d: %s iterations=%d residual=%.3e", d["step"],
                 d["method"], d["iterations"], d["residuals"][-1])
    case = cfg.manufactured_case()
    if case is not None:
        errs = vf.error_norms(case.velocity, traj, space)
        for name, val in errs.items():
            print("{}={:.17g}".format(name, val))
        final = vf.field_h1_error(space, traj.snapshots[-1], case.velocity, grid.T)
        print("final_h1_error={:.17g}".format(final))
    print("wrote {} snapshots to {}".format(grid.num_steps + 1, outdir))
    return EXIT_OK


def cmd_solve_adjoint(cfg, args):
    data = cfg.problem_data()
    mesh = cfg.mesh()
    space = cfg.space(mesh)
    grid = cfg.grid(data)
    outdir = cfg.output_dir(args.out)
    try:
        traj = st.solve_state(data, space, grid, cfg.forcing(),
                              cfg.solver_options())
        lam = adj.solve_adjoint(data, space, grid, traj)
    except SolverError as exc:
        log.error("solve failed: %s", exc)
        return EXIT_SOLVER
    _write_trajectory(cfg, outdir, space, traj, "state")

    class _Wrap:
        snapshots = lam.snapshots
        pressures = lam.multipliers

    _write_trajectory(cfg, outdir, space, _Wrap(), "adjoint")
    print("wrote state and adjoint snapshots to {}".format(outdir))
    return EXIT_OK


def cmd_optimize(cfg, args):
    data = cfg.problem_data()
    lo, hi = data.box
    if not (np.isfinite(lo).any() or np.isfinite(hi).any()):
        log.warning("optimizing without box bounds")
    mesh = cfg.mesh()
    space = cfg.space(mesh)
    grid = cfg.grid(data)
    outdir = cfg.output_dir(args.out)
    u0 = ctrl.Control(grid, mesh, box=data.box)
    try:
        report = ctrl.optimize(data, space, grid, u0, cfg.optimizer_options())
    except SolverError as exc:
        log.error("optimization failed: %s", exc)
        return EXIT_SOLVER
    report.to_csv(os.path.join(outdir, "optimize_report.csv"))
    with open(os.path.join(outdir, "control.csv"), "w", newline="\n") as f:
        f.write("interval,cell,component,value\n")
        vals = report.control.values
        for n in range(vals.shape[0]):
            for k in range(vals.shape[1]):
                for c in range(vals.shape[2]):
                    f.write("{},{},{},{:.17g}\n".format(n, k, c, vals[n, k, c]))
    _write_trajectory(cfg, outdir, space, report.state, "state")
    print("objective={:.17g}".format(report.objective))
    print("stationarity={:.17g}".format(report.stationarity_history[-1]))
    print("iterations={}".format(report.iterations))
    for key, val in report.kkt.items():
        print("kkt_{}={}".format(key, val))
    if not report.converged:
        log.error("optimizer stopped before reaching tolerance")
        return EXIT_OPTIMIZER
    return EXIT_OK


def cmd_convergence(cfg, args):
    study = cfg.study()
    thresholds = cfg.thresholds(study)
    outdir = cfg.output_dir(args.out)
    try:
        table = vf.run_convergence(study)
    except SolverError as exc:
        log.error("study failed: %s", exc)
        partial = getattr(exc, "partial_table", None)
        if partial is not None and partial.rows:
            partial.to_csv(os.path.join(outdir, "rates_partial.csv"))
        return EXIT_SOLVER
    table.to_csv(os.path.join(outdir, "rates.csv"))
    ok = True
    for line in table.summary_lines(thresholds):
        print(line)
        ok = ok and line.endswith("PASS")
    if not table.conclusive(list(thresholds)):
        print("note: slope fit sensitive to coarsest level; study inconclusive")
    return EXIT_OK if ok else EXIT_SOLVER


def build_parser():
    parser = argparse.ArgumentParser(
        prog="nsvopt",
        description="Flow control solver: state/adjoint marches, "
                    "box-constrained optimization and rate verification")
    parser.add_argument("--config", help="path to configuration file")
    parser.add_argument("--out", help="output directory override")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads (current implementation is "
                             "serial; accepted for interface stability)")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("solve-state", "solve-adjoint", "optimize", "convergence",
                 "mesh-info"):
        sub.add_parser(name)
    return parser


_COMMANDS = {
    "solve-state": cmd_solve_state,
    "solve-adjoint": cmd_solve_adjoint,
    "optimize": cmd_optimize,
    "convergence": cmd_convergence,
    "mesh-info": cmd_mesh_info,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    if args.config is None:
        log.error("--config is required")
        return EXIT_CONFIG
    try:
        cfg = RunConfig.load(args.config)
        return _COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except NsvoptError as exc:
        log.error("%s", exc)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
