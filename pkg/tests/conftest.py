import numpy as np
import pytest

from oasim.forward import ImageGrid, PhysicsConfig
from oasim.geometry import make_array

# (criterion id, passed, detail) appended by test_acceptance.py
ACCEPTANCE_RESULTS = []


@pytest.fixture(scope="session")
def vc():
    return make_array("virtual_circle")


@pytest.fixture(scope="session")
def ms():
    return make_array("multisegment")


@pytest.fixture(scope="session")
def grid():
    return ImageGrid()


@pytest.fixture(scope="session")
def small_grid():
    return ImageGrid(48, 2e-4)


@pytest.fixture(scope="session")
def physics():
    return PhysicsConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for cid, ok, detail in sorted(ACCEPTANCE_RESULTS, key=lambda r: r[0]):
        terminalreporter.write_line(f"AC{cid:02d} {'PASS' if ok else 'FAIL'}  {detail}")
