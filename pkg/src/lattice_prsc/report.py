"""Result files and figures written by the command-line front end."""

from __future__ import annotations

import csv
import json

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.collections import PolyCollection  # noqa: E402

from .fem import element_stress, von_mises  # noqa: E402
from .mesh import GroundStructure  # noqa: E402

RESULT_COLUMNS = [
    "attempt",
    "n_agg",
    "p",
    "sigma_hat_max_mpa",
    "N_cons",
    "N_jac",
    "iterations",
    "converged",
    "run_time_s",
    "m_frac_opt",
    "m_frac_pp",
    "max_sigma_r_mpa",
    "max_sigma_vm_mpa",
    "pp_valid",
]
TIMING_COLUMNS = {"run_time_s"}


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def write_results_csv(path, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in RESULT_COLUMNS])


def read_results_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_structured(path, data: dict) -> None:
    """Write a JSON document with sorted keys."""
    with open(path, "w") as fh:
        json.dump(_plain(data), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


# --------------------------------------------------------------------------
# figures
# --------------------------------------------------------------------------


def _triangles(gs: GroundStructure):
    polys, owner = [], []
    for i in range(gs.n_components):
        ref = gs.reference(i)
        xy = ref.nodes + gs.offsets[i]
        polys.append(xy[ref.elements[:, :3]])
        owner.append(np.full(len(ref.elements), i))
    return np.concatenate(polys), np.concatenate(owner)


def plot_density(path, gs: GroundStructure, rho, title: str = "optimized densities") -> None:
    polys, owner = _triangles(gs)
    fig, ax = plt.subplots(figsize=(6, 6))
    pc = PolyCollection(polys, array=np.asarray(rho)[owner], cmap="Greys", edgecolors="none")
    pc.set_clim(0.0, 1.0)
    ax.add_collection(pc)
    _finish(ax, gs, fig, pc, title, "density", path)


def plot_stress(path, gs: GroundStructure, fields: list, lame, title: str = "postprocessed design") -> None:
    polys, _ = _triangles(gs)
    centroid = np.array([[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]])
    vm = np.concatenate(
        [von_mises(*element_stress(gs.reference(i), fields[i], lame, centroid))[:, 0] for i in range(gs.n_components)]
    )
    fig, ax = plt.subplots(figsize=(6, 6))
    pc = PolyCollection(polys, array=vm / 1e6, cmap="viridis", edgecolors="none")
    ax.add_collection(pc)
    _finish(ax, gs, fig, pc, title, "Von Mises stress (MPa)", path)


def _finish(ax, gs, fig, pc, title, label, path):
    lo = gs.offsets.min(axis=0)
    hi = gs.offsets.max(axis=0) + gs.params.size
    ax.set_xlim(lo[0], hi[0])
    ax.set_ylim(lo[1], hi[1])
    ax.set_aspect("equal")
    ax.set_title(title)
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    fig.colorbar(pc, ax=ax, label=label, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_convergence(path, trace, total_mass: float) -> None:
    it = [r.iteration for r in trace.records]
    mf = [r.objective / total_mass for r in trace.records]
    viol = [max(r.max_violation, 1e-16) for r in trace.records]
    kkt = [max(r.kkt_error, 1e-16) for r in trace.records]
    fig, (a1, a2) = plt.subplots(2, 1, figsize=(6, 6), sharex=True)
    a1.plot(it, mf)
    a1.set_ylabel("mass fraction")
    a2.semilogy(it, viol, label="max constraint violation")
    a2.semilogy(it, kkt, label="KKT error")
    a2.set_xlabel("iteration")
    a2.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
