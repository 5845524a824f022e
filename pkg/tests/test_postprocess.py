import numpy as np
import pytest

from lattice_prsc.fem import FullOrderModel
from lattice_prsc.mesh import ComponentFactory, instantiate_ground_structure, parse_layout
from lattice_prsc.postprocess import (
    InvalidDesignError,
    drop_components,
    error_metrics,
    hanging_ports,
    mass_fraction,
    max_von_mises,
    postprocess,
    substitute_streamlined,
    validate_full_order,
)


def chain_gs(params, rows, loads=None):
    cells = parse_layout(rows)
    nrow = len(rows)
    bcs = {
        "dirichlet": [[0, nrow - 1 - r, "left"] for r, line in enumerate(rows) if line[0] not in "._ "],
        "loads": loads if loads is not None else [[len(rows[-1]) - 1, 0, "right", 0.0, -100.0]],
    }
    return instantiate_ground_structure(cells, bcs, params)


def test_drop_threshold_and_pruning(coarse_params):
    gs = chain_gs(coarse_params, ["XXXX"], loads=[[1, 0, "top", 0.0, -10.0]])
    d = drop_components(gs, np.array([1.0, 0.5, 0.1, 0.9]), 0.2)
    # (3, 0) survives the threshold but is cut off from the support by the dropped (2, 0)
    assert set(d.cells) == {(0, 0), (1, 0)}
    assert d.removed == [(3, 0)]
    assert d.valid


def test_dropping_loaded_component_invalidates(coarse_params):
    gs = chain_gs(coarse_params, ["XXX"])
    d = drop_components(gs, np.array([1.0, 1.0, 0.1]))
    assert not d.valid
    d = drop_components(gs, np.array([1.0, 0.1, 1.0]))
    assert not d.valid and "disconnected" in d.message


def test_drop_tolerance_validated(coarse_params):
    gs = chain_gs(coarse_params, ["XX"])
    with pytest.raises(ValueError):
        drop_components(gs, np.ones(2), 0.0)
    with pytest.raises(ValueError):
        drop_components(gs, np.ones(3))


def test_hanging_ports(coarse_params):
    gs = chain_gs(coarse_params, ["XXX"])
    d = drop_components(gs, np.ones(3))
    f = ComponentFactory(coarse_params)
    assert sorted(hanging_ports(d, (1, 0), f)) == ["bottom", "top"]
    # the support and the load are not hanging
    assert sorted(hanging_ports(d, (0, 0), f)) == ["bottom", "top"]
    assert sorted(hanging_ports(d, (2, 0), f)) == ["bottom", "top"]


def test_chain_becomes_horizontal_bars(coarse_params):
    gs = chain_gs(coarse_params, ["XXX"])
    d = substitute_streamlined(drop_components(gs, np.ones(3)))
    assert set(d.cells.values()) == {"H"}
    assert len(d.substitutions) == 3
    assert mass_fraction(d, gs) < 1.0


def test_dead_end_removed(coarse_params):
    gs = chain_gs(coarse_params, [".X.", "XXX"], loads=[[2, 0, "right", 0.0, -100.0]])
    d = substitute_streamlined(drop_components(gs, np.ones(4)))
    assert (1, 1) not in d.cells and (1, 1) in d.removed
    assert d.cells[(1, 0)] == "H"


def test_substitution_reaches_fixed_point(coarse_params):
    gs = chain_gs(coarse_params, ["XFX", "FXF", "XFX"], loads=[[2, 0, "bottom", 0.0, -100.0]])
    rng = np.random.default_rng(0)
    d = substitute_streamlined(drop_components(gs, rng.uniform(0.1, 1.0, 9)))
    again = substitute_streamlined(d)
    assert again.cells == d.cells
    f = ComponentFactory(coarse_params)
    if d.valid:
        # whatever remains carries no removable hanging branch
        for cell in d.cells:
            keep = [s for s in f(d.cells[cell]).sides if s not in hanging_ports(d, cell, f)]
            assert len(keep) >= 1


def test_postprocess_validates_with_full_order(coarse_params, lame):
    gs = chain_gs(coarse_params, ["XX", "XX"], loads=[[1, 0, "right", 0.0, -500.0]])
    pp = postprocess(gs, np.array([1.0, 1.0, 0.05, 0.05]), lame)
    assert pp.design.valid
    assert pp.max_stress > 0
    pgs = pp.design.ground_structure()
    fom = FullOrderModel(pgs, lame)
    vm = max_von_mises(pgs, fom.split(fom.solve(np.ones(pgs.n_components))), lame)
    assert vm == pytest.approx(pp.max_stress, rel=1e-12)


def test_invalid_design_not_validated(coarse_params, lame):
    gs = chain_gs(coarse_params, ["XX"])
    pp = postprocess(gs, np.array([1.0, 0.0]), lame)
    assert not pp.design.valid and pp.max_stress is None
    with pytest.raises(InvalidDesignError):
        validate_full_order(pp.design, lame)


def test_error_metrics_oracle():
    w = np.array([1.0, 1.0, 2.0])
    u = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    s = np.array([1.0, 2.0, 4.0])
    r = error_metrics(u, u, s, s, w)
    assert r.e_u == r.e_sigma_r == r.e_max_sigma_r == 0.0
    r = error_metrics(1.1 * u, u, 0.5 * s, s, w)
    assert r.e_u == pytest.approx(0.1)
    assert r.e_sigma_r == pytest.approx(0.5)
    assert r.e_max_sigma_r == pytest.approx(-0.5)
    with pytest.raises(ValueError):
        error_metrics(u, 0 * u, s, s, w)
