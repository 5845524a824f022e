"""Command-line front end: ``lattice-prsc {train,solve,optimize,postprocess,sweep}``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import pipeline
from .config import ConfigError, RunConfig
from .mesh import LayoutError, MeshError, cells_to_layout
from .offline import LibraryError, save_library
from .report import plot_convergence, plot_density, plot_stress, write_results_csv, write_structured
from .vtk import write_vtk

log = logging.getLogger("lattice_prsc")


def _parse_list(text, kind):
    return [kind(t) for t in str(text).split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lattice-prsc", description="Stress-constrained lattice design with port-reduced static condensation.")
    ap.add_argument("command", choices=["train", "solve", "optimize", "postprocess", "sweep"])
    ap.add_argument("--config", help="YAML run configuration")
    ap.add_argument("--library", help="component library file")
    ap.add_argument("--out", help="output directory (overrides output_dir)")
    ap.add_argument("--seed", type=int, help="random seed (overrides seed)")
    ap.add_argument("--fom", action="store_true", help="use unreduced port bases (full-order static condensation)")
    ap.add_argument("--oracle", action="store_true", help="solve with the monolithic finite element model")
    ap.add_argument("--rho", help="density vector file (one value per line) for solve/postprocess")
    ap.add_argument("--p", help="comma-separated KS multipliers for sweep")
    ap.add_argument("--n-agg", dest="n_agg", help="comma-separated region counts for sweep")
    ap.add_argument("--jobs", type=int, default=1, help="worker processes for sweep")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig().validate()
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out:
            cfg.output_dir = args.out
        os.makedirs(cfg.output_dir, exist_ok=True)
        handler = {
            "train": cmd_train,
            "solve": cmd_solve,
            "optimize": cmd_optimize,
            "postprocess": cmd_postprocess,
            "sweep": cmd_sweep,
        }[args.command]
        handler(cfg, args)
    except (ConfigError, LibraryError, LayoutError, MeshError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def _out(cfg, name):
    return os.path.join(cfg.output_dir, name)


def _write_common(cfg, lib=None, extra=None):
    with open(_out(cfg, "resolved_config.yaml"), "w") as fh:
        fh.write(cfg.to_yaml())
    prov = {"seed": cfg.seed, "config_hash": cfg.config_hash(), "library_checksum": lib.checksum() if lib is not None else None}
    if lib is not None:
        prov["library_mode"] = "FOM-SC" if not lib.reduced else "ROM"
        prov["library_provenance"] = lib.provenance
    prov.update(extra or {})
    write_structured(_out(cfg, "provenance.json"), prov)


def _library(cfg, args, gs):
    if args.fom:
        return pipeline.make_library(cfg, cfg.lattice_codes(gs), fom=True)
    if not args.library:
        raise LibraryError("a trained library file is required (--library), or pass --fom")
    if not os.path.exists(args.library):
        raise LibraryError(f"library file {args.library!r} not found")
    return pipeline.open_library(args.library, cfg, gs)


def _read_rho(path, n):
    rho = np.loadtxt(path, ndmin=1)
    if rho.shape != (n,):
        raise ValueError(f"density file has {rho.size} values, expected {n}")
    return rho


def _write_rho(path, rho):
    np.savetxt(path, rho, fmt="%.17g")


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_train(cfg, args):
    gs = cfg.build_problem()
    lib = pipeline.make_library(cfg, cfg.lattice_codes(gs), fom=args.fom)
    path = args.library or _out(cfg, "library.bin")
    checksum = save_library(lib, path)
    _write_common(cfg, lib, {"library_path": path})
    dims = {k: [b.x.shape[1], b.y.shape[1]] for k, b in lib.bases.items()}
    print(f"library written to {path} (sha256 {checksum[:12]}, port modes per class {dims})")


def cmd_solve(cfg, args):
    gs = cfg.build_problem()
    rho = _read_rho(args.rho, gs.n_components) if args.rho else np.ones(gs.n_components)
    lame = cfg.lame
    t0 = time.perf_counter()
    oracle = pipeline.oracle_solve(gs, lame, rho, cfg.simp)
    t_oracle = time.perf_counter() - t0
    lib = None
    if args.oracle:
        fields, mode = oracle, "FEM"
        report = {"mode": mode, "reference": "FEM", "e_u": 0.0, "e_sigma_r": 0.0, "e_max_sigma_r": 0.0}
    else:
        lib = _library(cfg, args, gs)
        _, sys_, fields = pipeline.forward_solve(gs, lib, rho, cfg.simp)
        mode = sys_.mode
        from .postprocess import compare_fields

        report = {"mode": mode, "reference": "FEM", **compare_fields(gs, rho, fields, oracle, lame).as_dict()}
    write_structured(_out(cfg, "error_report.json"), report)
    timing = {"fem_s": t_oracle}
    if lib is not None:
        timing["condensed"] = pipeline.time_forward(gs, lib, rho, cfg.simp)
    write_structured(_out(cfg, "timing.json"), timing)
    write_vtk(_out(cfg, "solution.vtk"), gs, {"density": rho}, fields)
    _write_common(cfg, lib)
    print(f"{mode} solve: e_u = {report['e_u']:.3e}, e_sigma_r = {report['e_sigma_r']:.3e}")


def _emit_attempts(cfg, gs, lib, attempts, prefix=""):
    a = attempts[-1]
    rho = a.result.x
    _write_rho(_out(cfg, f"{prefix}rho.txt"), rho)
    write_vtk(_out(cfg, f"{prefix}density.vtk"), gs, {"density": rho})
    plot_density(_out(cfg, f"{prefix}density.png"), gs, rho)
    plot_convergence(_out(cfg, f"{prefix}convergence.png"), a.result.trace, gs.volumes().sum())
    _emit_post(cfg, a.post, prefix)


def _emit_post(cfg, post, prefix=""):
    design = post.design
    with open(_out(cfg, f"{prefix}design_layout.txt"), "w") as fh:
        fh.write("\n".join(cells_to_layout(design.cells)) + "\n")
    if post.fields is not None:
        pgs = design.ground_structure()
        write_vtk(_out(cfg, f"{prefix}postprocessed.vtk"), pgs, None, post.fields)
        plot_stress(_out(cfg, f"{prefix}postprocessed.png"), pgs, post.fields, cfg.lame)


def cmd_optimize(cfg, args):
    gs = cfg.build_problem()
    lib = _library(cfg, args, gs)
    attempts = pipeline.optimize_with_retry(cfg, gs, lib, cfg.ks_p, cfg.n_agg)
    write_results_csv(_out(cfg, "results.csv"), [a.row for a in attempts])
    _emit_attempts(cfg, gs, lib, attempts)
    rho = attempts[-1].result.x
    extra = {}
    if lib.reduced:
        fom_lib = pipeline.make_library(cfg, cfg.lattice_codes(gs), fom=True)
        errs = pipeline.rom_error_report(gs, lib, fom_lib, rho, cfg.lame, cfg.simp)
        write_structured(_out(cfg, "error_report.json"), {"mode": "ROM", "reference": "FOM-SC", "rho": "optimized", **errs})
        write_structured(_out(cfg, "timing.json"), pipeline.timing_report(gs, lib, fom_lib, rho, cfg.simp))
    _write_common(cfg, lib, extra)
    for a in attempts:
        r = a.row
        print(
            f"attempt {r['attempt']}: converged={r['converged']} iterations={r['iterations']} "
            f"m_frac_opt={r['m_frac_opt']:.4f} m_frac_pp={r['m_frac_pp']:.4f} max_sigma_vm={r['max_sigma_vm_mpa']} MPa"
        )


def cmd_postprocess(cfg, args):
    from .postprocess import postprocess

    gs = cfg.build_problem()
    if not args.rho:
        raise ValueError("postprocess needs --rho")
    rho = _read_rho(args.rho, gs.n_components)
    post = postprocess(gs, rho, cfg.lame, cfg.drop_tolerance)
    _emit_post(cfg, post)
    summary = {
        "valid": post.design.valid,
        "message": post.design.message,
        "mass_fraction": post.mass_fraction,
        "max_sigma_vm_mpa": None if post.max_stress is None else post.max_stress / 1e6,
        "substitutions": [[list(c), a, b] for c, a, b in post.design.substitutions],
        "removed": [list(c) for c in post.design.removed],
    }
    write_structured(_out(cfg, "postprocess.json"), summary)
    _write_common(cfg)
    print(f"postprocessed mass fraction {post.mass_fraction:.4f}, max Von Mises {summary['max_sigma_vm_mpa']} MPa")


def _sweep_job(payload):
    cfg_dict, lib_path, fom, p, n_agg = payload
    cfg = RunConfig.from_dict(cfg_dict)
    gs = cfg.build_problem()
    if fom:
        lib = pipeline.make_library(cfg, cfg.lattice_codes(gs), fom=True)
    else:
        lib = pipeline.open_library(lib_path, cfg, gs)
    attempts = pipeline.optimize_with_retry(cfg, gs, lib, p, n_agg)
    return [a.row for a in attempts]


def cmd_sweep(cfg, args):
    ps = _parse_list(args.p, float) if args.p else [float(v) for v in cfg.sweep_p]
    ns = _parse_list(args.n_agg, int) if args.n_agg else [int(v) for v in cfg.sweep_n_agg]
    gs = cfg.build_problem()
    lib = _library(cfg, args, gs)
    jobs = [(cfg.to_dict(), args.library, args.fom, p, n) for n in ns for p in ps]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            results = list(ex.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]
    rows = [r for rs in results for r in rs]
    write_results_csv(_out(cfg, "results.csv"), rows)
    _write_common(cfg, lib)
    print(f"sweep wrote {len(rows)} rows for {len(jobs)} configurations")


if __name__ == "__main__":
    sys.exit(main())
