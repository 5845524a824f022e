import json
import subprocess
import sys

import pytest
import yaml

from lattice_prsc.cli import main
from lattice_prsc.report import TIMING_COLUMNS, read_results_csv

SMALL = {
    "problem": "cantilever",
    "scale_x": 4,
    "scale_y": 2,
    "resolution": 8,
    "load_n": 30000.0,
    "n_agg": 2,
    "n_snapshots": 10,
    "energy_fraction": 0.999,
    "solver": {"max_iter": 300},
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "small.yaml"
    cfg.write_text(yaml.safe_dump(SMALL))
    lib = root / "lib.bin"
    assert main(["train", "--config", str(cfg), "--library", str(lib), "--out", str(root / "train")]) == 0
    return root, cfg, lib


def _strip_timing(rows):
    return [{k: v for k, v in r.items() if k not in TIMING_COLUMNS} for r in rows]


def test_train_writes_library_and_provenance(workspace):
    root, _, lib = workspace
    assert lib.exists()
    prov = json.loads((root / "train" / "provenance.json").read_text())
    assert {"seed", "config_hash", "library_checksum"} <= set(prov)
    assert prov["library_mode"] == "ROM"
    assert (root / "train" / "resolved_config.yaml").exists()


def test_full_basis_solve_matches_oracle(workspace):
    root, cfg, _ = workspace
    out = root / "solve_fom"
    assert main(["solve", "--config", str(cfg), "--fom", "--out", str(out)]) == 0
    rep = json.loads((out / "error_report.json").read_text())
    assert rep["mode"] == "FOM-SC" and rep["e_u"] < 1e-6
    assert (out / "solution.vtk").exists()
    assert main(["solve", "--config", str(cfg), "--oracle", "--out", str(root / "solve_fem")]) == 0
    assert json.loads((root / "solve_fem" / "error_report.json").read_text())["mode"] == "FEM"


def test_rom_solve_reports_errors_and_timing(workspace):
    root, cfg, lib = workspace
    out = root / "solve_rom"
    assert main(["solve", "--config", str(cfg), "--library", str(lib), "--out", str(out)]) == 0
    rep = json.loads((out / "error_report.json").read_text())
    assert rep["mode"] == "ROM" and 0 < rep["e_u"] < 0.1
    timing = json.loads((out / "timing.json").read_text())
    assert timing["condensed"]["time_s"] > 0


def test_optimize_outputs_and_determinism(workspace):
    root, cfg, lib = workspace
    a, b = root / "opt_a", root / "opt_b"
    for out in (a, b):
        assert main(["optimize", "--config", str(cfg), "--library", str(lib), "--out", str(out)]) == 0
    for name in (
        "results.csv",
        "density.vtk",
        "postprocessed.vtk",
        "design_layout.txt",
        "error_report.json",
        "timing.json",
        "resolved_config.yaml",
        "provenance.json",
        "density.png",
        "convergence.png",
        "postprocessed.png",
        "rho.txt",
    ):
        assert (a / name).exists(), name
    ra, rb = read_results_csv(a / "results.csv"), read_results_csv(b / "results.csv")
    assert _strip_timing(ra) == _strip_timing(rb)
    # the echoed configuration reproduces the run
    c = root / "opt_c"
    assert main(["optimize", "--config", str(a / "resolved_config.yaml"), "--library", str(lib), "--out", str(c)]) == 0
    assert _strip_timing(read_results_csv(c / "results.csv")) == _strip_timing(ra)


def test_postprocess_subcommand(workspace):
    root, cfg, lib = workspace
    src = root / "opt_a" / "rho.txt"
    if not src.exists():
        assert main(["optimize", "--config", str(cfg), "--library", str(lib), "--out", str(root / "opt_a")]) == 0
    out = root / "pp"
    assert main(["postprocess", "--config", str(cfg), "--rho", str(src), "--out", str(out)]) == 0
    summary = json.loads((out / "postprocess.json").read_text())
    assert 0 < summary["mass_fraction"] <= 1
    assert (out / "design_layout.txt").exists()


def test_sweep_grid(workspace):
    root, cfg, lib = workspace
    out = root / "sweep"
    args = ["sweep", "--config", str(cfg), "--library", str(lib), "--out", str(out), "--p", "10,15", "--n-agg", "1,2"]
    assert main(args) == 0
    rows = read_results_csv(out / "results.csv")
    first = [r for r in rows if r["attempt"] == "1"]
    assert len(first) == 4
    assert {(r["p"], r["n_agg"]) for r in first} == {("10.0", "1"), ("15.0", "1"), ("10.0", "2"), ("15.0", "2")}


def test_missing_library_is_an_error(workspace, capsys):
    root, cfg, _ = workspace
    assert main(["optimize", "--config", str(cfg), "--out", str(root / "x")]) == 2
    assert "library" in capsys.readouterr().err
    assert main(["optimize", "--config", str(cfg), "--library", str(root / "missing.bin"), "--out", str(root / "x")]) == 2


def test_invalid_config_is_an_error(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("youngs_modulus_pa: -5\n")
    assert main(["solve", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "positive" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "lattice_prsc", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "train" in r.stdout
