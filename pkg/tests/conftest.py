import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from klref.hhg import build_hierarchy
from klref.macro_mesh import MacroMesh
from klref.problems import waves

settings.register_profile(
    "klref",
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("klref")


def two_triangles() -> MacroMesh:
    return MacroMesh.from_arrays([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]], [[0, 1, 2], [0, 2, 3]])


def single_tet() -> MacroMesh:
    return MacroMesh.from_arrays([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], [[0, 1, 2, 3]])


def two_tets() -> MacroMesh:
    pts = [[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1]]
    return MacroMesh.from_arrays(pts, [[0, 1, 2, 3], [1, 2, 3, 4]])


@pytest.fixture(scope="session")
def waves_problem():
    return waves()


@pytest.fixture(scope="session")
def smooth_waves():
    # gentle parameters resolved already on coarse levels
    return waves(2.0, 6.0 * np.pi)


@pytest.fixture(scope="session")
def square_h4(waves_problem):
    return build_hierarchy(waves_problem.initial_mesh(), 4)


# acceptance report: one line per criterion check, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
