import numpy as np
import pytest

from lattice_prsc.fem import plane_stress_lame
from lattice_prsc.mesh import ComponentFactory, MeshParams, instantiate_ground_structure, parse_layout
from lattice_prsc.offline import full_library, train_library
from lattice_prsc.problems import build_l_bracket

E_TI = 113.8e9
NU_TI = 0.34


@pytest.fixture(scope="session")
def lame():
    return plane_stress_lame(E_TI, NU_TI)


@pytest.fixture(scope="session")
def params():
    return MeshParams()


@pytest.fixture(scope="session")
def coarse_params():
    """Small P2 components for fast structural tests."""
    return MeshParams(order=2, resolution=8)


@pytest.fixture(scope="session")
def factory(params):
    return ComponentFactory(params)


@pytest.fixture(scope="session")
def full_lib_all(params, lame):
    return full_library(params, ["D", "F", "S", "X"], lame)


@pytest.fixture(scope="session")
def mixed_3x3(params):
    cells = parse_layout(["XFD", "FXS", "XDX"])
    bcs = {
        "dirichlet": [[0, 0, "bottom"], [1, 0, "bottom"], [2, 0, "bottom"]],
        "loads": [[2, 2, "top", 1000.0, -5000.0], [0, 2, "left", 2000.0, 0.0]],
    }
    return instantiate_ground_structure(cells, bcs, params)


@pytest.fixture(scope="session")
def bracket(params):
    return build_l_bracket(8, params)


@pytest.fixture(scope="session")
def bracket_rom(params, lame):
    return train_library(params, ["F", "X"], lame, 0.999, 100, 10.0, 0)


@pytest.fixture(scope="session")
def bracket_fom(params, lame):
    return full_library(params, ["F", "X"], lame)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion; lines are echoed in the terminal summary."""
    log = request.config.stash[ACCEPTANCE]

    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"criterion {number:>2}  {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        print(line)
        log.append((number, line))
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = sorted(config.stash.get(ACCEPTANCE, []))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in lines:
            terminalreporter.write_line(line)
