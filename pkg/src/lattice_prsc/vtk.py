"""Legacy ASCII VTK export of ground structures and designs."""

from __future__ import annotations

import numpy as np

from .mesh import GroundStructure

# VTK cell types for linear and quadratic triangles
_VTK_TRIANGLE = 5
_VTK_QUADRATIC_TRIANGLE = 22


def write_vtk(path, gs: GroundStructure, cell_data: dict | None = None, point_fields: list | None = None, title: str = "lattice") -> None:
    """Write every instance's mesh as one unstructured grid.

    ``cell_data`` maps names to per-component values (broadcast to elements)
    or per-element arrays already concatenated over instances.
    ``point_fields`` is an optional list of per-instance nodal displacement
    vectors (interleaved x, y).
    """
    pts, cells, comp_id = [], [], []
    offset = 0
    for i in range(gs.n_components):
        ref = gs.reference(i)
        pts.append(ref.nodes + gs.offsets[i])
        cells.append(ref.elements + offset)
        comp_id.append(np.full(len(ref.elements), i))
        offset += ref.nnodes
    P = np.vstack(pts)
    C = np.vstack(cells)
    cid = np.concatenate(comp_id)
    ctype = _VTK_QUADRATIC_TRIANGLE if C.shape[1] == 6 else _VTK_TRIANGLE
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID", f"POINTS {len(P)} double"]
    lines += [f"{x:.12g} {y:.12g} 0" for x, y in P]
    lines.append(f"CELLS {len(C)} {len(C) * (C.shape[1] + 1)}")
    lines += [f"{C.shape[1]} " + " ".join(map(str, row)) for row in C]
    lines.append(f"CELL_TYPES {len(C)}")
    lines += [str(ctype)] * len(C)
    lines.append(f"CELL_DATA {len(C)}")
    lines += ["SCALARS component int 1", "LOOKUP_TABLE default"] + [str(v) for v in cid]
    for name, values in (cell_data or {}).items():
        v = np.asarray(values, dtype=float)
        if v.shape == (gs.n_components,):
            v = v[cid]
        if v.shape != (len(C),):
            raise ValueError(f"cell data {name!r} has the wrong length")
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"] + [f"{x:.12g}" for x in v]
    if point_fields is not None:
        U = np.concatenate([np.asarray(u).reshape(-1, 2) for u in point_fields])
        lines.append(f"POINT_DATA {len(P)}")
        lines.append("VECTORS displacement double")
        lines += [f"{a:.12g} {b:.12g} 0" for a, b in U]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
