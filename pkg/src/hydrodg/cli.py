"""Command-line entry point: ``hydrodg {cavity,converge,infsup,check}``.

Exit codes: 0 success, 2 configuration error, 3 solver failure,
4 check failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from . import analysis
from .dg_space import BrokenSpace
from .forms import Params, assemble_system, cavity_bcs, dirichlet_bcs
from .io import ConfigError, RunConfig, write_csv_table, write_vtk
from .linsolve import SolverError, solve_saddle
from .mesh import MeshError, build_structured_mesh, read_mesh

log = logging.getLogger("hydrodg")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_CHECK = 4

# coercivity is checked on the run mesh when it is this small, otherwise on
# an 8x8 structured mesh of the same degree
COERCIVITY_PROXY = 8

_FLAGS = {
    # flag: (config key, type)
    "--mesh": ("mesh", str),
    "--mesh-file": ("mesh_file", str),
    "--degree": ("degree", int),
    "--nu": ("nu", float),
    "--eta": ("eta", float),
    "--delta-p": ("delta_p", float),
    "--bc": ("bc", str),
    "--levels": ("levels", str),
    "--delta-sweep": ("delta_sweep", str),
    "--out": ("out", str),
    "--seed": ("seed", int),
}


def _config_epilog() -> str:
    lines = ["config keys (key = value lines in --config files; flags override):"]
    for key, text in RunConfig.HELP.items():
        lines.append(f"  {key:<14} {text}")
    lines.append("exit codes: 0 ok, 2 config error, 3 solver failure, 4 check failure")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE", help="key=value run configuration file")
    for flag, (key, typ) in _FLAGS.items():
        common.add_argument(flag, dest=key, type=typ, default=None, help=RunConfig.HELP[key])
    common.add_argument("--dump-matrices", dest="dump_matrices", action="store_true", default=None,
                        help=RunConfig.HELP["dump_matrices"])
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")

    parser = argparse.ArgumentParser(
        prog="hydrodg", description="SIP discontinuous Galerkin solver for 2D hydrostatic Stokes",
        epilog=_config_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("cavity", "lid-driven cavity run with VTK and diagnostics output"),
                       ("converge", "manufactured-solution error study over mesh levels"),
                       ("infsup", "coercivity and inf-sup constants over mesh levels"),
                       ("check", "randomized identity suite")):
        sub.add_parser(name, parents=[common], help=text, description=text, epilog=_config_epilog(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    changes = {key: getattr(args, key) for key, _ in _FLAGS.values() if getattr(args, key) is not None}
    if args.dump_matrices:
        changes["dump_matrices"] = True
    cfg = cfg.updated(**changes)
    cfg.validate()
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    return out


def _bcs(cfg: RunConfig):
    return cavity_bcs() if cfg.bc == "cavity" else dirichlet_bcs()


def _load_mesh(cfg: RunConfig, default: str):
    if cfg.mesh_file:
        try:
            mesh = read_mesh(cfg.mesh_file)
        except (OSError, MeshError) as exc:
            raise ConfigError(str(exc)) from None
        return mesh, Path(cfg.mesh_file).name
    nx, nz = cfg.mesh_shape(default)
    return build_structured_mesh(nx, nz), f"{nx}x{nz}"


# ----------------------------------------------------------------------
# commands


def cmd_cavity(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    params = cfg.params()
    bc = _bcs(cfg)
    mesh, label = _load_mesh(cfg, "30x30")

    probe = mesh
    if BrokenSpace(mesh, params.degree).ndofs > 1000:
        probe = build_structured_mesh(COERCIVITY_PROXY, COERCIVITY_PROXY)
    coer = analysis.measure_coercivity(probe, params, bc)
    probe_label = label if probe is mesh else f"{COERCIVITY_PROXY}x{COERCIVITY_PROXY}"
    print(f"coercivity margin={coer.margin:.6e} bound={coer.bound:.6e} mesh={probe_label}")
    if coer.margin <= 0:
        msg = (f"coercivity margin {coer.margin:.3e} <= 0 at eta={params.eta:g}: "
               f"the SIP penalty is below the threshold for k={params.degree}")
        print(f"WARNING {msg}", file=sys.stderr)

    t0 = time.perf_counter()
    system = assemble_system(mesh, params, bc)
    if cfg.dump_matrices:
        system.dump(out / "matrices")
    try:
        x, report = solve_saddle(system)
    except SolverError as exc:
        print(f"ERROR solver failure: {exc}", file=sys.stderr)
        if exc.report is not None:
            print(f"ERROR report: {exc.report}", file=sys.stderr)
        return EXIT_SOLVER
    elapsed = time.perf_counter() - t0
    sol = system.split(x)
    diag = analysis.cavity_diagnostics(sol)
    norms = analysis.compute_norms(sol, bc)

    stem = f"cavity_k{params.degree}"
    write_vtk(mesh, sol, out / f"{stem}.vtk")
    write_vtk(mesh, sol, out / f"{stem}_dg.vtk", discontinuous=True)
    header = ("mesh", "degree", "nu", "eta", "delta_p", "residual", "mean_pressure",
              "recirculation", "hydrostatic", "pressure_range", "vel_norm", "p_norm",
              "coercivity_margin", "seconds", "seed")
    row = (label, params.degree, params.nu, params.eta, params.delta_p, report.residual,
           diag.mean_pressure, diag.recirculation, diag.hydrostatic, diag.pressure_range,
           norms["vel"], norms["L2_p"], coer.margin, elapsed, cfg.seed)
    write_csv_table((header, [row]), out / f"{stem}.csv")
    print(f"cavity mesh={label} k={params.degree} eta={params.eta:g} residual={report.residual:.3e} "
          f"mean_p={diag.mean_pressure:.3e} recirculation={diag.recirculation:.6e} "
          f"hydrostatic={diag.hydrostatic:.6e} seconds={elapsed:.2f}")
    return EXIT_OK


def cmd_converge(cfg: RunConfig, degree_given: bool) -> int:
    if cfg.mesh_file:
        raise ConfigError("converge runs on structured levels; mesh_file is not supported")
    out = _out_dir(cfg)
    levels = [(n, n) for n in cfg.level_list("8,16,32")]
    degrees = (cfg.degree,) if degree_given else (1, 2)
    for k in degrees:
        params = cfg.params(degree=k, eta=cfg.eta)
        try:
            table = analysis.run_convergence(None, levels, params)
        except SolverError as exc:
            print(f"ERROR solver failure: {exc}", file=sys.stderr)
            return EXIT_SOLVER
        write_csv_table(table, out / f"converge_k{k}.csv", metadata=table.metadata)
        for r in table.rows:
            rate = "" if r.vel_rate is None else f" vel_rate={r.vel_rate:.3f} p_rate={r.p_rate:.3f}"
            print(f"converge k={k} mesh={r.nx}x{r.nz} vel_error={r.vel_error:.6e} "
                  f"p_error={r.p_error:.6e}{rate}")
    return EXIT_OK


def cmd_infsup(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    bc = _bcs(cfg)
    if cfg.mesh_file:
        meshes = [_load_mesh(cfg, "4x4")]
    else:
        meshes = [(build_structured_mesh(n, n), f"{n}x{n}") for n in cfg.level_list("4,8,16")]
    deltas = [cfg.delta_p] + [d for d in cfg.delta_values if d != cfg.delta_p]
    reports = []
    try:
        for mesh, label in meshes:
            for i, dp in enumerate(deltas):
                params = cfg.params(delta_p=dp)
                if i == 0:
                    rep = analysis.stability_report(mesh, params, bc, seed=cfg.seed, label=label)
                else:
                    # only gamma depends on delta_p
                    gamma = None
                    if 3 * BrokenSpace(mesh, params.degree).ndofs <= analysis.DENSE_DOF_LIMIT:
                        gamma = analysis.measure_global_infsup(mesh, params, bc)
                    rep = analysis.StabilityReport(**{**reports[-1].__dict__, "delta_p": dp,
                                                      "gamma": gamma, "mean_pressure": None})
                reports.append(rep)
                g = "n/a" if rep.gamma is None else f"{rep.gamma:.6e}"
                print(f"infsup mesh={label} k={params.degree} delta_p={dp:g} "
                      f"coercivity={rep.coercivity_margin:.6e} beta={rep.beta:.6e} gamma={g}")
    except analysis.StabilityError as exc:
        print(f"ERROR {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"ERROR solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    write_csv_table(reports, out / f"infsup_k{cfg.degree}.csv", metadata={"seed": cfg.seed})
    return EXIT_OK


def cmd_check(cfg: RunConfig, degree_given: bool) -> int:
    if cfg.mesh_file:
        raise ConfigError("check runs on structured meshes; mesh_file is not supported")
    nx, nz = cfg.mesh_shape("4x4")
    if nx != nz:
        raise ConfigError("check uses square NxN meshes")
    degrees = (cfg.degree,) if degree_given else (1, 2)
    results = analysis.identity_checks(sizes=(nx,), degrees=degrees, seed=cfg.seed)
    failed = 0
    for r in results:
        print(r.line())
        failed += not r.passed
    header = ("name", "mesh", "degree", "value", "threshold", "passed", "seed")
    rows = [(r.name, r.mesh, r.degree, r.value, r.threshold, r.passed, r.seed) for r in results]
    write_csv_table((header, rows), _out_dir(cfg) / "checks.csv")
    print(f"SUMMARY checks={len(results)} failed={failed} status={'PASS' if not failed else 'FAIL'}")
    return EXIT_OK if not failed else EXIT_CHECK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "cavity":
            return cmd_cavity(cfg)
        if args.command == "converge":
            return cmd_converge(cfg, args.degree is not None)
        if args.command == "infsup":
            return cmd_infsup(cfg)
        return cmd_check(cfg, args.degree is not None)
    except ConfigError as exc:
        print(f"ERROR config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"ERROR output: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
