import numpy as np
import pytest

from lattice_prsc.fem import FullOrderModel
from lattice_prsc.mesh import LayoutError
from lattice_prsc.problems import (
    CANTILEVER_LOAD_N,
    L_BRACKET_LOAD_N,
    build_cantilever,
    build_l_bracket,
    l_bracket_cells,
)


@pytest.mark.parametrize("scale", [2, 3, 8])
def test_l_bracket_occupancy(scale):
    cells = l_bracket_cells(scale)
    cut = scale - scale // 2
    full = {(c, r) for c in range(scale) for r in range(scale)}
    block = {(c, r) for c in range(cut, scale) for r in range(cut, scale)}
    assert set(cells) == full - block
    assert len(cells) == scale**2 - (scale // 2) ** 2


def test_l_bracket_8_has_48_components(bracket):
    assert bracket.n_components == 48


def test_l_bracket_boundary_conditions(bracket):
    top = max(r for _, r in bracket.cells)
    for p in bracket.dirichlet_ports:
        (i, side), = bracket.global_ports[p]
        assert side == "top" and bracket.cell_of(i)[1] == top
    assert len(bracket.dirichlet_ports) == 4
    total = sum(f for _, f in bracket.loaded_ports)
    np.testing.assert_allclose(total, [0.0, -L_BRACKET_LOAD_N])
    cols = sorted(bracket.cell_of(bracket.global_ports[p][0][0])[0] for p, _ in bracket.loaded_ports)
    assert cols == [6, 7]


def test_l_bracket_consistent_load_vector(bracket, lame):
    f = FullOrderModel(bracket, lame).load_vector()
    assert f[1::2].sum() == pytest.approx(-L_BRACKET_LOAD_N)
    assert abs(f[0::2].sum()) < 1e-9


def test_l_bracket_too_small():
    with pytest.raises(LayoutError):
        build_l_bracket(1)


def test_cantilever_boundary_conditions(coarse_params):
    gs = build_cantilever(6, 3, coarse_params)
    assert gs.n_components == 18
    assert len(gs.dirichlet_ports) == 3
    for p in gs.dirichlet_ports:
        (i, side), = gs.global_ports[p]
        assert side == "left" and gs.cell_of(i)[0] == 0
    total = sum(f for _, f in gs.loaded_ports)
    np.testing.assert_allclose(total, [0.0, -CANTILEVER_LOAD_N])


def test_cantilever_default_aspect():
    # 16 x 4 cells of 6.25 cm: 1 m by 25 cm
    from lattice_prsc.mesh import MeshParams

    p = MeshParams()
    assert 16 * p.size == pytest.approx(1.0)
    assert 4 * p.size == pytest.approx(0.25)


def test_cantilever_shape_validated(coarse_params):
    with pytest.raises(LayoutError):
        build_cantilever(2, 4, coarse_params)


def test_checkerboard_pattern(bracket):
    for (c, r), code in bracket.cells.items():
        assert code == "XF"[(c + r) % 2]
