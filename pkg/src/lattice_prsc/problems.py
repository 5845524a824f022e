"""Benchmark ground structures: L-bracket and cantilever."""

from __future__ import annotations

from .mesh import ComponentFactory, GroundStructure, LayoutError, MeshParams, instantiate_ground_structure

L_BRACKET_LOAD_N = 67_500.0
CANTILEVER_LOAD_N = 30_000.0


def lattice_code(col: int, row: int, pattern: str) -> str:
    """Component type at a cell: a single code, or alternating codes on a checkerboard."""
    if len(pattern) == 1:
        return pattern
    return pattern[(col + row) % len(pattern)]


def l_bracket_cells(scale: int, pattern: str = "XF") -> dict:
    """Square of ``scale`` x ``scale`` cells minus the upper-right ``scale//2`` block."""
    if scale < 2:
        raise LayoutError("L-bracket scale must be at least 2")
    cut = scale - scale // 2
    return {
        (c, r): lattice_code(c, r, pattern)
        for r in range(scale)
        for c in range(scale)
        if not (c >= cut and r >= cut)
    }


def build_l_bracket(
    scale: int = 8,
    params: MeshParams | None = None,
    load_n: float = L_BRACKET_LOAD_N,
    pattern: str = "XF",
    factory: ComponentFactory | None = None,
) -> GroundStructure:
    """L-bracket with its top edge clamped and a downward load on the arm tip.

    The total load ``load_n`` is split evenly over the top ports of the two
    rightmost cells of the horizontal arm.
    """
    params = params or MeshParams()
    cells = l_bracket_cells(scale, pattern)
    cut = scale - scale // 2
    top = scale - 1
    arm_top = cut - 1
    dirichlet = [[c, top, "top"] for c in range(cut)]
    loads = [[c, arm_top, "top", 0.0, -load_n / 2.0] for c in (scale - 2, scale - 1)]
    return instantiate_ground_structure(cells, {"dirichlet": dirichlet, "loads": loads}, params, factory)


def build_cantilever(
    scale_x: int = 16,
    scale_y: int = 4,
    params: MeshParams | None = None,
    load_n: float = CANTILEVER_LOAD_N,
    pattern: str = "XF",
    factory: ComponentFactory | None = None,
) -> GroundStructure:
    """Cantilever clamped on its left edge, loaded downward on the top of the two rightmost cells."""
    if not scale_x >= scale_y >= 2:
        raise LayoutError("cantilever needs scale_x >= scale_y >= 2")
    params = params or MeshParams()
    cells = {(c, r): lattice_code(c, r, pattern) for r in range(scale_y) for c in range(scale_x)}
    dirichlet = [[0, r, "left"] for r in range(scale_y)]
    loads = [[c, scale_y - 1, "top", 0.0, -load_n / 2.0] for c in (scale_x - 2, scale_x - 1)]
    return instantiate_ground_structure(cells, {"dirichlet": dirichlet, "loads": loads}, params, factory)


def build_custom(layout, bcs: dict, params: MeshParams | None = None, factory=None) -> GroundStructure:
    from .mesh import parse_layout

    return instantiate_ground_structure(parse_layout(layout), bcs, params or MeshParams(), factory)
