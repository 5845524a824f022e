"""Black-and-white designs from optimized densities, full-order validation and ROM error measures."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .fem import FullOrderModel, LameParams, element_geometry, element_stress, shape_values, von_mises
from .mesh import (
    OPPOSITE,
    SIDE_OFFSET,
    ComponentFactory,
    GroundStructure,
    LayoutError,
    MeshError,
    centroid_rule,
    instantiate_ground_structure,
    nine_point_rule,
    variant_code,
)

log = logging.getLogger(__name__)


class InvalidDesignError(ValueError):
    pass


@dataclass
class Design:
    """Kept cells (with their possibly substituted codes) and the boundary conditions on them."""

    cells: dict
    bcs: dict
    params: object
    substitutions: list = field(default_factory=list)
    removed: list = field(default_factory=list)
    valid: bool = True
    message: str = ""

    def ground_structure(self, factory: ComponentFactory | None = None) -> GroundStructure:
        return instantiate_ground_structure(self.cells, self.bcs, self.params, factory)


@dataclass
class PostprocessedDesign:
    design: Design
    mass_fraction: float
    max_stress: float | None = None
    fields: list | None = None


@dataclass
class ErrorReport:
    e_max_sigma_r: float
    e_sigma_r: float
    e_u: float

    def as_dict(self) -> dict:
        return {"e_max_sigma_r": self.e_max_sigma_r, "e_sigma_r": self.e_sigma_r, "e_u": self.e_u}


# --------------------------------------------------------------------------
# dropping
# --------------------------------------------------------------------------


def drop_components(gs: GroundStructure, rho, rho_min: float = 0.2) -> Design:
    """Keep components with rho >= rho_min at full density and drop the rest.

    Components no longer connected to a Dirichlet port are pruned as well.
    The design is flagged invalid if a loaded port is lost or disconnected.
    """
    if not 0.0 < rho_min < 1.0:
        raise ValueError("dropping tolerance must lie in (0, 1)")
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (gs.n_components,):
        raise ValueError("density vector length does not match the ground structure")
    cells = {gs.instances[i][0]: gs.instances[i][1] for i in range(gs.n_components) if rho[i] >= rho_min}
    design = _restrict(gs.bc_spec, cells, gs.params)
    _prune_floating(design)
    return design


def _restrict(bc_spec: dict, cells: dict, params) -> Design:
    dirichlet = [d for d in bc_spec["dirichlet"] if (d[0], d[1]) in cells]
    loads = [x for x in bc_spec["loads"] if (x[0], x[1]) in cells]
    design = Design(dict(cells), {"dirichlet": dirichlet, "loads": loads}, params)
    if len(loads) != len(bc_spec["loads"]):
        design.valid = False
        design.message = "a loaded component was dropped"
    if not dirichlet:
        design.valid = False
        design.message = "no supported component remains"
    return design


def _ports_of(code: str, factory: ComponentFactory) -> tuple:
    return factory(code).sides


def _connected(design: Design, factory: ComponentFactory) -> set:
    """Cells reachable from supported cells through paired ports."""
    start = {(d[0], d[1]) for d in design.bcs["dirichlet"]}
    seen = set(start)
    stack = list(start)
    while stack:
        c, r = stack.pop()
        for side in _ports_of(design.cells[(c, r)], factory):
            dc, dr = SIDE_OFFSET[side]
            nb = (c + dc, r + dr)
            if nb in design.cells and nb not in seen and OPPOSITE[side] in _ports_of(design.cells[nb], factory):
                seen.add(nb)
                stack.append(nb)
    return seen


def _prune_floating(design: Design, factory: ComponentFactory | None = None) -> None:
    factory = factory or ComponentFactory(design.params)
    if not design.valid:
        return
    reach = _connected(design, factory)
    for cr in sorted(set(design.cells) - reach):
        design.removed.append(cr)
        del design.cells[cr]
    if any((x[0], x[1]) not in reach for x in design.bcs["loads"]):
        design.valid = False
        design.message = "a loaded component is disconnected from the supports"


# --------------------------------------------------------------------------
# streamlined substitution
# --------------------------------------------------------------------------


def hanging_ports(design: Design, cell, factory: ComponentFactory) -> list:
    """Ports of ``cell`` neither paired with a kept neighbour, nor Dirichlet, nor loaded."""
    c, r = cell
    fixed = {(d[0], d[1], d[2]) for d in design.bcs["dirichlet"]}
    loaded = {(x[0], x[1], x[2]) for x in design.bcs["loads"]}
    out = []
    for side in _ports_of(design.cells[cell], factory):
        dc, dr = SIDE_OFFSET[side]
        nb = (c + dc, r + dr)
        paired = nb in design.cells and OPPOSITE[side] in _ports_of(design.cells[nb], factory)
        if not (paired or (c, r, side) in fixed or (c, r, side) in loaded):
            out.append(side)
    return out


def substitute_streamlined(design: Design, factory: ComponentFactory | None = None, max_passes: int | None = None) -> Design:
    """Replace components having hanging ports by the lightest variant keeping their other connections.

    A component whose remaining connections number at most one, none of them
    loaded, is removed.  Passes repeat until nothing changes.
    """
    factory = factory or ComponentFactory(design.params)
    out = Design(dict(design.cells), design.bcs, design.params, list(design.substitutions), list(design.removed),
                 design.valid, design.message)
    if not out.valid:
        return out
    max_passes = max_passes or (len(out.cells) + 1)
    loaded_cells = {(x[0], x[1]) for x in out.bcs["loads"]}
    fixed_cells = {(d[0], d[1]) for d in out.bcs["dirichlet"]}
    for _ in range(max_passes):
        changed = False
        for cell in sorted(out.cells, key=lambda cr: (cr[1], cr[0])):
            if cell not in out.cells:
                continue
            hang = hanging_ports(out, cell, factory)
            if not hang:
                continue
            code = out.cells[cell]
            keep = [s for s in _ports_of(code, factory) if s not in hang]
            if len(keep) <= 1 and cell not in loaded_cells and cell not in fixed_cells:
                del out.cells[cell]
                out.removed.append(cell)
                changed = True
                continue
            if not keep:
                continue
            candidate = variant_code(keep)
            try:
                lighter = factory(candidate).area < factory(code).area
            except MeshError:
                log.warning("no streamlined variant %r for cell %s; keeping %r", candidate, cell, code)
                continue
            if lighter and candidate != code:
                out.substitutions.append((cell, code, candidate))
                out.cells[cell] = candidate
                changed = True
        if not changed:
            break
    else:
        log.warning("substitution did not reach a fixed point within %d passes", max_passes)
    _prune_floating(out, factory)
    return out


def mass_fraction(design: Design, gs: GroundStructure, factory: ComponentFactory | None = None) -> float:
    factory = factory or ComponentFactory(design.params)
    kept = sum(factory(code).volume for code in design.cells.values())
    return float(kept / gs.volumes().sum())


# --------------------------------------------------------------------------
# validation and errors
# --------------------------------------------------------------------------


def validation_points():
    """Interior sample points: nine-point rule plus the centroid."""
    return np.vstack([nine_point_rule().points, centroid_rule().points])


def max_von_mises(gs: GroundStructure, fields: list, lame: LameParams, rho=None) -> float:
    """Largest (optionally relaxed) Von Mises stress over the interior sample points of every element."""
    pts = validation_points()
    best = 0.0
    for i in range(gs.n_components):
        vm = von_mises(*element_stress(gs.reference(i), fields[i], lame, pts))
        if rho is not None:
            vm = np.sqrt(max(rho[i], 0.0)) * vm
        best = max(best, float(vm.max()))
    return best


def validate_full_order(design: Design, lame: LameParams, factory: ComponentFactory | None = None):
    """Full-order solve of the design at unit density; returns (max Von Mises stress, fields, ground structure)."""
    if not design.valid:
        raise InvalidDesignError(design.message or "invalid design")
    try:
        gs = design.ground_structure(factory)
    except LayoutError as exc:
        raise InvalidDesignError(str(exc)) from exc
    fom = FullOrderModel(gs, lame)
    try:
        u = fom.solve(np.ones(gs.n_components))
    except ValueError as exc:
        raise InvalidDesignError(str(exc)) from exc
    fields = fom.split(u)
    return max_von_mises(gs, fields, lame), fields, gs


def postprocess(gs: GroundStructure, rho, lame: LameParams, rho_min: float = 0.2, substitute: bool = True) -> PostprocessedDesign:
    factory = ComponentFactory(gs.params)
    design = drop_components(gs, rho, rho_min)
    if substitute:
        design = substitute_streamlined(design, factory)
    mf = mass_fraction(design, gs, factory)
    if not design.valid:
        return PostprocessedDesign(design, mf)
    try:
        vm, fields, _ = validate_full_order(design, lame, factory)
    except InvalidDesignError as exc:
        design.valid = False
        design.message = str(exc)
        return PostprocessedDesign(design, mf)
    return PostprocessedDesign(design, mf, vm, fields)


def sample_fields(gs: GroundStructure, fields: list, lame: LameParams, rho, rule=None):
    """Displacements, relaxed stresses and quadrature weights at rule points of every element."""
    rule = rule or nine_point_rule()
    rho = np.asarray(rho, dtype=float)
    U, SR, W = [], [], []
    for i in range(gs.n_components):
        comp = gs.reference(i)
        N = shape_values(comp.order, rule.points)  # (npts, nloc)
        u = fields[i]
        ux = u[0::2][comp.elements] @ N.T  # (ne, npts)
        uy = u[1::2][comp.elements] @ N.T
        U.append(np.stack([ux.ravel(), uy.ravel()], axis=1))
        vm = von_mises(*element_stress(comp, u, lame, rule.points))
        SR.append(np.sqrt(max(rho[i], 0.0)) * vm.ravel())
        _, det = element_geometry(comp.nodes, comp.elements)
        W.append((np.abs(det)[:, None] * rule.weights[None, :] * comp.thickness).ravel())
    return np.vstack(U), np.concatenate(SR), np.concatenate(W)


def error_metrics(rom_u, fom_u, rom_sr, fom_sr, weights) -> ErrorReport:
    """Relative ROM errors: signed max relaxed stress, L2 relaxed stress, L2 displacement.

    Displacements are (npts, 2) point values, stresses (npts,), all at
    quadrature points with the given weights.
    """
    w = np.asarray(weights, dtype=float)
    rom_u, fom_u = np.asarray(rom_u, dtype=float), np.asarray(fom_u, dtype=float)
    rom_sr, fom_sr = np.asarray(rom_sr, dtype=float), np.asarray(fom_sr, dtype=float)
    nu = np.sqrt(np.sum(w[:, None] * fom_u**2))
    ns = np.sqrt(np.sum(w * fom_sr**2))
    if nu == 0.0 or ns == 0.0 or fom_sr.max() == 0.0:
        raise ValueError("reference field is zero; relative errors are undefined")
    return ErrorReport(
        float((rom_sr.max() - fom_sr.max()) / fom_sr.max()),
        float(np.sqrt(np.sum(w * (rom_sr - fom_sr) ** 2)) / ns),
        float(np.sqrt(np.sum(w[:, None] * (rom_u - fom_u) ** 2)) / nu),
    )


def compare_fields(gs, rho, rom_fields, ref_fields, lame, rule=None) -> ErrorReport:
    ru, rs, w = sample_fields(gs, rom_fields, lame, rho, rule)
    fu, fs, _ = sample_fields(gs, ref_fields, lame, rho, rule)
    return error_metrics(ru, fu, rs, fs, w)
