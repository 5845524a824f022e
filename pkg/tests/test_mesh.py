import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lattice_prsc.mesh import (
    LATTICE_TYPES,
    OPPOSITE,
    SIDES,
    ComponentFactory,
    GroundStructure,
    LayoutError,
    MeshError,
    MeshParams,
    cells_to_layout,
    centroid_rule,
    four_point_rule,
    instantiate_ground_structure,
    nine_point_rule,
    parse_layout,
    variant_code,
    variant_sides,
)


def monomial_integral(a, b):
    # exact integral of xi^a eta^b over the reference triangle
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)


@pytest.mark.parametrize("rule, degree", [(four_point_rule(), 3), (nine_point_rule(), 5), (centroid_rule(), 1)])
def test_quadrature_exact_to_degree(rule, degree):
    xi, eta = rule.xi[:, 0], rule.xi[:, 1]
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            q = rule.weights @ (xi**a * eta**b)
            assert q == pytest.approx(monomial_integral(a, b), rel=1e-13, abs=1e-16)


def test_quadrature_points_interior():
    for rule in (four_point_rule(), nine_point_rule()):
        assert np.all(rule.points > 0)
        np.testing.assert_allclose(rule.points.sum(axis=1), 1.0, atol=1e-15)


@pytest.mark.parametrize("code", sorted(LATTICE_TYPES))
def test_lattice_components_have_four_matching_ports(factory, code):
    comp = factory(code)
    assert comp.sides == list(SIDES)
    n = factory.params.port_nodes
    for side in SIDES:
        assert len(comp.ports[side]) == n
        coord = comp.port_coordinate(side)
        assert np.all(np.diff(coord) > 0)
    # opposite ports line up after a one-cell shift
    h = factory.params.size
    np.testing.assert_allclose(comp.nodes[comp.ports["right"]], comp.nodes[comp.ports["left"]] + [h, 0], atol=1e-12)
    np.testing.assert_allclose(comp.nodes[comp.ports["top"]], comp.nodes[comp.ports["bottom"]] + [0, h], atol=1e-12)
    assert comp.ports_disjoint


@pytest.mark.parametrize("code", sorted(LATTICE_TYPES))
def test_lattice_components_fit_in_cell(factory, code):
    comp = factory(code)
    h = factory.params.size
    assert comp.nodes.min() >= -1e-12 and comp.nodes.max() <= h + 1e-12
    assert 0 < comp.area < h * h
    assert comp.volume == pytest.approx(comp.area * factory.params.thickness)


def test_port_dof_layout(factory):
    comp = factory("X")
    idx = comp.ports["left"]
    np.testing.assert_array_equal(comp.port_dofs("left"), np.concatenate([2 * idx, 2 * idx + 1]))
    P = comp.all_port_dofs()
    I = comp.interior_dofs()
    assert len(np.intersect1d(P, I)) == 0
    assert len(P) + len(I) == comp.ndofs


def test_streamlined_variants_are_lighter(factory):
    full = factory("S").area
    for code in ["H", "V", "3", "6", "9", "c", "7", "b", "d", "e"]:
        comp = factory(code)
        assert set(comp.sides) == set(variant_sides(code))
        assert comp.area < full


@given(st.sets(st.sampled_from(SIDES), min_size=1))
def test_variant_code_round_trip(sides):
    assert set(variant_sides(variant_code(sorted(sides)))) == set(sides)


def test_unknown_component_type(factory):
    with pytest.raises(MeshError):
        factory("Q")


layout_rows = st.lists(st.text(alphabet="XFDS.", min_size=3, max_size=3), min_size=1, max_size=4).filter(
    lambda rows: any(ch != "." for r in rows for ch in r)
)


@given(layout_rows)
def test_layout_round_trip(rows):
    cells = parse_layout(rows)
    again = parse_layout(cells_to_layout(cells))
    assert again == cells


def test_parse_layout_bottom_row_is_zero():
    cells = parse_layout(["X.", "FS"])
    assert cells == {(0, 1): "X", (0, 0): "F", (1, 0): "S"}


def test_empty_layout_rejected():
    with pytest.raises(LayoutError):
        parse_layout(["...", "..."])


def test_ground_structure_port_graph(coarse_params):
    cells = parse_layout(["XF", "FX"])
    gs = instantiate_ground_structure(cells, {"dirichlet": [[0, 0, "left"]], "loads": [[1, 1, "right", 0.0, -1.0]]}, coarse_params)
    assert gs.n_components == 4
    shared = [p for p in gs.global_ports if len(p) == 2]
    # 2x2 grid: 4 interior joints, 8 boundary ports
    assert len(shared) == 4
    assert gs.n_global_ports == 12
    for pair in shared:
        (i, si), (j, sj) = pair
        assert OPPOSITE[si] == sj
        assert gs.local_to_global[i][si] == gs.local_to_global[j][sj]
    assert [gs.instances[i][0] for i in range(4)] == [(0, 0), (1, 0), (0, 1), (1, 1)]


def test_boundary_condition_on_interior_port_rejected(coarse_params):
    cells = parse_layout(["XF"])
    with pytest.raises(LayoutError):
        instantiate_ground_structure(cells, {"dirichlet": [[0, 0, "right"]], "loads": []}, coarse_params)


def test_boundary_condition_on_missing_cell_rejected(coarse_params):
    with pytest.raises(LayoutError):
        instantiate_ground_structure(parse_layout(["X"]), {"dirichlet": [[3, 0, "left"]], "loads": []}, coarse_params)


def test_loaded_and_fixed_port_rejected(coarse_params):
    bcs = {"dirichlet": [[0, 0, "left"]], "loads": [[0, 0, "left", 1.0, 0.0]]}
    with pytest.raises(LayoutError):
        instantiate_ground_structure(parse_layout(["X"]), bcs, coarse_params)


def test_ground_structure_json_round_trip(coarse_params):
    cells = parse_layout(["XF.", "FXS"])
    bcs = {"dirichlet": [[0, 0, "bottom"]], "loads": [[2, 0, "right", 1.0, -2.0]]}
    gs = instantiate_ground_structure(cells, bcs, coarse_params)
    back = GroundStructure.from_json(gs.to_json())
    assert back.cells == gs.cells
    assert back.global_ports == gs.global_ports
    assert back.dirichlet_ports == gs.dirichlet_ports
    np.testing.assert_array_equal(back.offsets, gs.offsets)


def test_mesh_params_port_node_count():
    assert MeshParams(order=2, resolution=12, corner_gap=1).port_nodes == 21
    assert MeshParams(order=1, resolution=12, corner_gap=1).port_nodes == 11


def test_factory_caches(coarse_params):
    f = ComponentFactory(coarse_params)
    assert f("X") is f("X")
