import json

import numpy as np
import pytest
import yaml

from lattice_prsc.config import ConfigError, RunConfig
from lattice_prsc.mesh import instantiate_ground_structure, parse_layout
from lattice_prsc.optimizer import OptimizationTrace, IterationRecord
from lattice_prsc.report import (
    RESULT_COLUMNS,
    plot_convergence,
    plot_density,
    plot_stress,
    read_results_csv,
    write_results_csv,
    write_structured,
)
from lattice_prsc.vtk import write_vtk


@pytest.fixture(scope="module")
def tiny_gs(coarse_params):
    cells = parse_layout(["XF", "FX"])
    bcs = {"dirichlet": [[0, 0, "left"]], "loads": [[1, 1, "right", 0.0, -1.0]]}
    return instantiate_ground_structure(cells, bcs, coarse_params)


def _parse_vtk(path):
    lines = open(path).read().splitlines()
    out = {}
    for k, line in enumerate(lines):
        head = line.split()
        if head and head[0] in ("POINTS", "CELLS", "CELL_TYPES", "CELL_DATA", "POINT_DATA"):
            out[head[0]] = (int(head[1]), k)
    return lines, out


def test_vtk_structure(tmp_path, tiny_gs, lame):
    from lattice_prsc.fem import FullOrderModel

    fom = FullOrderModel(tiny_gs, lame)
    fields = fom.split(fom.solve(np.ones(4)))
    path = tmp_path / "d.vtk"
    rho = np.array([0.1, 0.2, 0.3, 0.4])
    write_vtk(path, tiny_gs, {"density": rho}, fields)
    lines, idx = _parse_vtk(path)
    assert lines[0] == "# vtk DataFile Version 3.0" and lines[2] == "ASCII"
    npts = sum(tiny_gs.reference(i).nnodes for i in range(4))
    nel = sum(tiny_gs.reference(i).n_elements for i in range(4))
    assert idx["POINTS"][0] == npts
    assert idx["CELLS"][0] == nel and idx["CELL_TYPES"][0] == nel
    assert idx["POINT_DATA"][0] == npts
    types = set(lines[idx["CELL_TYPES"][1] + 1 : idx["CELL_TYPES"][1] + 1 + nel])
    assert types == {"22"}
    # every connectivity row has six nodes within range
    for row in lines[idx["CELLS"][1] + 1 : idx["CELLS"][1] + 1 + nel]:
        vals = list(map(int, row.split()))
        assert vals[0] == 6 and max(vals[1:]) < npts
    text = "\n".join(lines)
    assert "SCALARS density double 1" in text and "VECTORS displacement double" in text


def test_vtk_rejects_bad_cell_data(tmp_path, tiny_gs):
    with pytest.raises(ValueError):
        write_vtk(tmp_path / "x.vtk", tiny_gs, {"density": np.ones(3)})


def test_results_csv_round_trip(tmp_path):
    row = {c: 1 for c in RESULT_COLUMNS}
    row.update({"p": 15.0, "converged": True, "max_sigma_vm_mpa": None, "m_frac_opt": 0.1 + 0.2})
    path = tmp_path / "r.csv"
    write_results_csv(path, [row, row])
    back = read_results_csv(path)
    assert len(back) == 2
    assert list(back[0]) == RESULT_COLUMNS
    assert back[0]["converged"] == "true" and back[0]["max_sigma_vm_mpa"] == ""
    assert float(back[0]["m_frac_opt"]) == 0.1 + 0.2


def test_structured_output_sorted(tmp_path):
    path = tmp_path / "e.json"
    write_structured(path, {"b": np.float64(1.5), "a": np.arange(2), "c": np.bool_(True)})
    text = path.read_text()
    assert text.index('"a"') < text.index('"b"') < text.index('"c"')
    assert json.loads(text) == {"a": [0, 1], "b": 1.5, "c": True}


def test_figures_written(tmp_path, tiny_gs, lame):
    from lattice_prsc.fem import FullOrderModel

    fom = FullOrderModel(tiny_gs, lame)
    fields = fom.split(fom.solve(np.ones(4)))
    plot_density(tmp_path / "d.png", tiny_gs, np.linspace(0, 1, 4))
    plot_stress(tmp_path / "s.png", tiny_gs, fields, lame)
    tr = OptimizationTrace(records=[IterationRecord(k, 1.0 / (k + 1), 0.0, 0.1, 0.1, 1.0 / (k + 1), 1.0) for k in range(5)])
    plot_convergence(tmp_path / "c.png", tr, 1.0)
    for name in ("d.png", "s.png", "c.png"):
        data = (tmp_path / name).read_bytes()
        assert data[:8] == b"\x89PNG\r\n\x1a\n" and len(data) > 1000


def test_config_defaults_valid():
    cfg = RunConfig().validate()
    assert cfg.sigma_max_mpa == 880.0 and cfg.ks_p == 15.0 and cfg.n_agg == 10
    assert cfg.lame.mu > 0


def test_config_yaml_round_trip():
    cfg = RunConfig.from_dict({"problem": "cantilever", "scale_x": 6, "scale_y": 3, "ks_p": 12.0, "solver": {"tol": 1e-7}})
    back = RunConfig.from_yaml(cfg.to_yaml())
    assert back == cfg
    assert back.config_hash() == cfg.config_hash()
    other = RunConfig.from_dict({**cfg.to_dict(), "output_dir": "elsewhere"})
    assert other.config_hash() == cfg.config_hash()
    assert RunConfig.from_dict({**cfg.to_dict(), "seed": 5}).config_hash() != cfg.config_hash()


@pytest.mark.parametrize(
    "bad",
    [
        {"youngs_modulus_pa": -1.0},
        {"poisson_ratio": 0.5},
        {"sigma_hat_max_mpa": 900.0},
        {"problem": "bridge"},
        {"pattern": "XQ"},
        {"energy_fraction": 0.0},
        {"n_agg": 0},
        {"load_n": 0.0},
        {"problem": "custom"},
        {"unknown_key": 1},
        {"solver": {"not_a_setting": 1}},
    ],
)
def test_config_rejects(bad):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(bad)


def test_config_rejects_non_mapping():
    with pytest.raises(ConfigError):
        RunConfig.from_yaml("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        RunConfig.from_yaml("a: [1,\n")


def test_custom_problem_from_config(tmp_path):
    text = yaml.safe_dump(
        {
            "problem": "custom",
            "layout": ["XF", "FX"],
            "bcs": {"dirichlet": [[0, 0, "left"]], "loads": [[1, 1, "right", 0.0, -10.0]]},
            "resolution": 8,
        }
    )
    path = tmp_path / "c.yaml"
    path.write_text(text)
    gs = RunConfig.load(path).build_problem()
    assert gs.n_components == 4
    assert RunConfig.load(path).lattice_codes(gs) == ["F", "X"]
