"""Command line entry point ``binghamopt``.

Exit codes: 0 success, 1 configuration or input error, 2 nonconvergence.
The output directory is ``output_dir`` from the config unless the
``BINGHAMOPT_OUTPUT_DIR`` environment variable is set.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys

import numpy as np

from .errors import (
    ConfigError,
    GeometryError,
    MeshConfigError,
    MeshParseError,
    NonConvergenceError,
    TopologyError,
)

logger = logging.getLogger("binghamopt")

INPUT_ERRORS = (ConfigError, MeshParseError, MeshConfigError, TopologyError, GeometryError, OSError)


def _load(path):
    from .config import parse_config

    cfg = parse_config(path)
    return cfg, cfg.load_mesh()


def cmd_run(args):
    from .bingham import solve_stokes_initial
    from .mesh import write_msh
    from .optimizer import optimize
    from .output import write_fields, write_trace

    cfg, mesh = _load(args.config)
    out = cfg.output_path()
    out.mkdir(parents=True, exist_ok=True)
    params = cfg.physics()

    def progress(row):
        if row["iter"] % 10 == 0:
            logger.info("iter %d  L_A=%.6g  |c|=%.3e  |V|=%.3e  t=%g", row["iter"], row["L_A"], row["c_norm"], row["V_H1"], row["t"])

    if cfg["emit_fields"]:
        write_fields(mesh, solve_stokes_initial(mesh, params, cfg.bcs()), None, out / "initial.vtk", params)
    code = 0
    try:
        result = optimize(mesh, params, cfg.auglag(), cfg.settings(), cfg.bcs(), sink=progress)
    except NonConvergenceError as exc:
        logger.error("%s", exc)
        result = getattr(exc, "result", None)
        code = 2
        if result is None:
            return code
    if cfg["emit_trace"]:
        write_trace(result.trace, out / "trace.csv")
    if cfg["emit_fields"]:
        write_fields(result.mesh, result.state, result.adjoint, out / "final.vtk", params)
        write_msh(result.mesh, out / "final.msh", cfg.tag_names())
    print(f"status: {result.trace.status}; {len(result.trace.rows)} inner iterations; output in {out}")
    return code


def cmd_solve_state(args):
    from .bingham import solve_state, solve_stokes_initial
    from .output import write_fields, write_newton_report

    cfg, mesh = _load(args.config)
    out = cfg.output_path()
    params = cfg.physics()
    reg = cfg["mode"] == "regularized"
    init = solve_stokes_initial(mesh, params, cfg.bcs())
    s = cfg.settings()
    try:
        state, rep = solve_state(
            mesh, params, cfg.bcs(), init, reg, tol=s.newton_tol, beta=s.newton_beta, max_iter=s.newton_max_iter
        )
    except NonConvergenceError as exc:
        logger.error("%s", exc)
        write_newton_report(exc.report, out / "newton_report.csv")
        return 2
    write_newton_report(rep, out / "newton_report.csv")
    if cfg["emit_fields"]:
        write_fields(mesh, state, None, out / "state.vtk", params)
    print(f"converged in {rep.iterations} iterations; final residual {rep.residual_norms[-1]:.3e}")
    return 0


def cmd_check_gradient(args):
    from .adjoint import adjoint_consistency_check, solve_adjoint
    from .bingham import solve_state

    cfg, mesh = _load(args.config)
    out = cfg.output_path()
    out.mkdir(parents=True, exist_ok=True)
    params = cfg.physics()
    try:
        state, _ = solve_state(mesh, params, cfg.bcs(), None, True, tol=1e-9)
    except NonConvergenceError as exc:
        logger.error("%s", exc)
        return 2
    adjoint = solve_adjoint(mesh, state, params, True)
    rng = np.random.default_rng(cfg["gradient_seed"])
    shape = mesh.topology.tagged_vertices("shape")
    rows = []
    for k in range(cfg["gradient_directions"]):
        W = np.zeros((mesh.n_vertices, 2))
        W[shape] = rng.standard_normal((len(shape), 2))
        err, pred, fd = adjoint_consistency_check(
            mesh, state, adjoint, params, W, auglag=cfg.auglag(), bcs=cfg.bcs(), h=cfg["fd_step"]
        )
        rows.append((k, pred, fd, err))
        print(f"direction {k}: adjoint {pred:.10g}  fd {fd:.10g}  rel.err {err:.3e}")
    with open(out / "gradient_check.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["direction", "predicted", "finite_difference", "rel_error"])
        w.writerows([k, "%.17g" % p, "%.17g" % f, "%.17g" % e] for k, p, f, e in rows)
    print(f"max relative error {max(r[3] for r in rows):.3e}")
    return 0


def cmd_make_mesh(args):
    from .mesh import write_msh
    from .meshgen import channel_mesh

    hole = None if args.empty else ((args.cx, args.cy), args.edge)
    mesh = channel_mesh(args.n, hole=hole)
    write_msh(mesh, args.output)
    print(f"wrote {args.output}: {mesh.n_vertices} vertices, {mesh.n_cells} cells")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="binghamopt", description="Bingham-flow shape optimisation")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)
    for name, func, helptext in (
        ("run", cmd_run, "run the augmented Lagrangian optimisation"),
        ("check-gradient", cmd_check_gradient, "compare shape derivative with finite differences"),
        ("solve-state", cmd_solve_state, "solve the state equation and write the Newton report"),
    ):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("config")
        sp.set_defaults(func=func)
    mm = sub.add_parser("make-mesh", help="write a structured channel mesh (MSH 2.2)")
    mm.add_argument("output")
    mm.add_argument("--n", type=int, default=20, help="grid cells per side")
    mm.add_argument("--cx", type=float, default=0.3)
    mm.add_argument("--cy", type=float, default=0.45)
    mm.add_argument("--edge", type=float, default=0.1)
    mm.add_argument("--empty", action="store_true", help="no obstacle")
    mm.set_defaults(func=cmd_make_mesh)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, NonConvergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, NonConvergenceError) else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
