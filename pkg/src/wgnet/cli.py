"""wgnet command line: solve, convergence, enrich, mesh-info, validate-quadrature.

Exit codes: 0 success, 1 numerical failure, 2 configuration error.
"""

from __future__ import annotations

import os

if os.environ.get("WGNET_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["WGNET_THREADS"])

import argparse
import csv
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, defaults, load_config
from .linear_solver import SolverError
from .mesh import MeshError, generate_lshape_mesh, generate_square_mesh, load_mesh, uniform_refine
from .problems import custom_problem, eoc, error_report, get_problem
from .quadrature import monomial_moment_table

log = logging.getLogger("wgnet")


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def build_problem(cfg: RunConfig):
    p = cfg.values["problem"]
    if p["name"] == "custom":
        prob = custom_problem(p["f"], p["g"], p["u"], p["domain"])
    elif p["name"] == "interface_strip":
        prob = get_problem("interface_strip", beta=p["beta"])
    else:
        prob = get_problem(p["name"])
    if p["cutoff"]:
        prob.params["cutoff"] = p["cutoff"]
    return prob


def build_mesh(cfg: RunConfig, level: int = 0):
    m = cfg.values["mesh"]
    if m["generator"] == "file":
        mesh = load_mesh(m["path"])
        for _ in range(level):
            mesh = uniform_refine(mesh)
        return mesh
    gen = generate_square_mesh if m["generator"] == "square" else generate_lshape_mesh
    return gen(m["n"] * 2**level, m["cell_kind"])


def build_space(cfg: RunConfig, mesh):
    from .wg_core import WgSpace

    d = cfg.values["discretization"]
    return WgSpace(mesh, d["k"], d["quad_degree"], d["proj_degree"])


def _check_domain(cfg, prob):
    gen = cfg.values["mesh"]["generator"]
    if gen in ("square", "lshape") and prob.domain in ("square", "lshape") and gen != prob.domain:
        raise ConfigError(f"problem {prob.name!r} lives on the {prob.domain} domain but mesh.generator = {gen}")


def manifest(cfg: RunConfig, command: str, results: dict, timings: dict) -> dict:
    return {
        "command": command,
        "config": cfg.echo(),
        "seeds": {"network": cfg["network.seed"]},
        "versions": {"wgnet": __version__, "numpy": np.__version__, "python": platform.python_version()},
        "threads": os.environ.get("WGNET_THREADS"),
        "timings": timings,
        "results": results,
    }


def write_manifest(out: Path, data: dict):
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, default=_json_default)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


# ------------------------------------------------------------------ commands

def cmd_solve(cfg: RunConfig, out: Path) -> int:
    from .wg_core import wg_solve

    t0 = time.perf_counter()
    prob = build_problem(cfg)
    _check_domain(cfg, prob)
    mesh = build_mesh(cfg)
    space = build_space(cfg, mesh)
    sol = wg_solve(space, prob, cfg["solver.rel_tol"], cfg["solver.max_iter"])
    t1 = time.perf_counter()
    nc = space.n_cell_dofs
    rows = []
    u0 = sol.u[: space.n_interior].reshape(mesh.n_cells, nc)
    for c in range(mesh.n_cells):
        rows.append([c, *mesh.centroids[c], *u0[c]])
    header = ["cell", "x", "y"] + [f"u0_{i}" for i in range(nc)]
    write_csv(out / "solution.csv", header, rows)
    results = {"h": mesh.h, "dofs": len(space.free_dofs), "cg_iterations": sol.iterations,
               "cg_residual": sol.residual}
    if prob.u is not None:
        rep = error_report(space, sol.u, prob)
        results.update(err_aw=rep["err_aw"], err_l2=rep["err_l2"])
        print(f"h = {mesh.h:.6g}  dofs = {rep['dofs']}  energy error = {rep['err_aw']:.6e}  "
              f"L2 error = {rep['err_l2']:.6e}")
    else:
        print(f"h = {mesh.h:.6g}  dofs = {len(space.free_dofs)}  (no exact solution)")
    write_manifest(out, manifest(cfg, "solve", results, {"solve": t1 - t0}))
    return 0


def cmd_convergence(cfg: RunConfig, out: Path, levels: int | None = None) -> int:
    from .wg_core import wg_solve

    levels = levels or cfg["convergence.levels"]
    prob = build_problem(cfg)
    _check_domain(cfg, prob)
    if prob.u is None:
        raise ConfigError("convergence study needs an exact solution (problem.u)")
    t0 = time.perf_counter()
    data = []
    for lev in range(levels):
        mesh = build_mesh(cfg, lev)
        space = build_space(cfg, mesh)
        sol = wg_solve(space, prob, cfg["solver.rel_tol"], cfg["solver.max_iter"])
        data.append(error_report(space, sol.u, prob))
        print(f"level {lev}: h = {mesh.h:.5g}  dofs = {data[-1]['dofs']}  "
              f"err_aw = {data[-1]['err_aw']:.6e}  err_l2 = {data[-1]['err_l2']:.6e}")
    hs = [d["h"] for d in data]
    eoc_aw = eoc([d["err_aw"] for d in data], hs)
    eoc_l2 = eoc([d["err_l2"] for d in data], hs)
    for i, d in enumerate(data):
        d["eoc_aw"] = eoc_aw[i - 1] if i else None
        d["eoc_l2"] = eoc_l2[i - 1] if i else None
    header = ["h", "dofs", "err_aw", "err_l2", "eoc_aw", "eoc_l2"]
    write_csv(out / "rates.csv", header, [[d[h] for h in header] for d in data])
    with open(out / "rates.gp.dat", "w", encoding="utf-8") as fh:
        fh.write("# log(h) log(err_aw) log(err_l2)\n")
        for d in data:
            fh.write(f"{np.log(d['h']):.17g} {np.log(d['err_aw']):.17g} {np.log(d['err_l2']):.17g}\n")
    print("EOC (energy):", " ".join(f"{r:.3f}" for r in eoc_aw))
    write_manifest(out, manifest(cfg, "convergence", {"levels": data}, {"total": time.perf_counter() - t0}))
    return 0


def cmd_enrich(cfg: RunConfig, out: Path) -> int:
    from .enrichment import config_dict, run_algorithm1
    from .problems import singular_mode

    prob = build_problem(cfg)
    _check_domain(cfg, prob)
    mesh = build_mesh(cfg)
    space = build_space(cfg, mesh)
    ecfg = cfg.enrichment_config()
    u_s = singular_mode if prob.name == "lshape_singular" else None

    def progress(rec):
        print(f"step {rec.m}: |J| = {rec.abs_J:.6e}  J_h = {rec.J_h:.10e}  "
              f"err_aw = {_fmt(rec.err_aw)}  redundant = {rec.redundant}")

    rep = run_algorithm1(prob, space, ecfg, singular_part=u_s, callback=progress)
    rows = []
    for s in rep.rows():
        rows.append([s["m"], s["abs_J"], s["eta"], s["J_h"], s["err_aw"], s["eps_m"]])
    write_csv(out / "enrichment.csv", ["m", "abs_J", "eta", "J_h", "err_aw", "eps_m"], rows)
    steps = [{"m": s.m, "abs_J": s.abs_J, "eta": s.eta, "J_h": s.J_h, "err_aw": s.err_aw,
              "eps_m": s.eps_m, "redundant": s.redundant, "orthogonality": s.orthogonality,
              "accepted": s.accepted, "loss_first": s.loss_first, "loss_last": s.loss_last,
              "rejected_steps": s.rejected_steps, "seconds": s.seconds} for s in rep.steps]
    results = {"baseline": {"J_h": rep.baseline_J_h, "err_aw": rep.baseline_err_aw},
               "steps": steps, "stopped_by": rep.stopped_by, "tol": rep.state.tol,
               "enrichment_config": config_dict(ecfg), "checkpoints": rep.state.networks}
    print(f"stopped by {rep.stopped_by} after {rep.state.m} enrichments")
    write_manifest(out, manifest(cfg, "enrich", results, rep.seconds))
    return 0


def cmd_mesh_info(cfg: RunConfig | None, path: str | None = None) -> int:
    mesh = load_mesh(path) if path else build_mesh(cfg)
    sizes = {}
    for c in mesh.cells:
        sizes[len(c)] = sizes.get(len(c), 0) + 1
    ratio = (mesh.diameters**2 / mesh.areas).max()
    print(f"vertices,{len(mesh.vertices)}")
    print(f"cells,{mesh.n_cells}")
    print(f"edges,{mesh.n_edges}")
    print(f"boundary_edges,{len(mesh.boundary_edges)}")
    print(f"area,{mesh.area():.17g}")
    print(f"h,{mesh.h:.17g}")
    print(f"max_h2_over_area,{ratio:.6g}")
    for m, count in sorted(sizes.items()):
        print(f"cells_with_{m}_vertices,{count}")
    return 0


def cmd_validate_quadrature(degree: int) -> int:
    rows = monomial_moment_table(degree)
    print("domain,a,b,relative_error")
    worst = 0.0
    for dom, a, b, err in rows:
        print(f"{dom},{a},{b},{err:.3e}")
        worst = max(worst, err)
    print(f"# max relative error {worst:.3e}", file=sys.stderr)
    return 0 if worst <= 1e-12 else 1


# ---------------------------------------------------------------------- main

def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wgnet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("solve", "convergence", "enrich", "mesh-info"):
        s = sub.add_parser(name)
        s.add_argument("--config", help="run configuration file")
        s.add_argument("--out", help="output directory (overrides output.dir)")
        s.add_argument("--seed", type=int, help="network seed (overrides network.seed)")
        if name == "convergence":
            s.add_argument("--levels", type=int)
        if name == "mesh-info":
            s.add_argument("--mesh", help="mesh file to inspect")
    q = sub.add_parser("validate-quadrature")
    q.add_argument("--degree", type=int, default=12)
    q.add_argument("--config", help="ignored; accepted for uniformity")
    return p


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "validate-quadrature":
            return cmd_validate_quadrature(args.degree)
        cfg = load_config(args.config) if args.config else defaults()
        if args.seed is not None:
            if args.seed < 0 or args.seed >= 2**64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg.set("network.seed", args.seed)
        if args.command == "mesh-info":
            return cmd_mesh_info(cfg, args.mesh)
        out = Path(args.out or cfg["output.dir"])
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "solve":
            return cmd_solve(cfg, out)
        if args.command == "convergence":
            return cmd_convergence(cfg, out, args.levels)
        if args.command == "enrich":
            return cmd_enrich(cfg, out)
    except (ConfigError, MeshError) as exc:
        print(f"wgnet: configuration error: {exc}", file=sys.stderr)
        return 2
    except (SolverError, FloatingPointError, ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"wgnet: numerical failure: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"wgnet: error: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
