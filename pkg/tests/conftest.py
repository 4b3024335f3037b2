import numpy as np
import pytest

from binghamopt.bingham import PhysicsParams
from binghamopt.mesh import TriangleMesh
from binghamopt.meshgen import channel_mesh


def unit_square(tags=("walls", "outflow", "walls", "inflow")):
    """Two-triangle unit square; ``tags`` for bottom, right, top, left."""
    v = [[0, 0], [1, 0], [1, 1], [0, 1]]
    cells = [[0, 1, 2], [0, 2, 3]]
    facets = [[0, 1], [1, 2], [2, 3], [3, 0]]
    return TriangleMesh(v, cells, facets, list(tags))


def single_triangle(points=((0, 0), (1, 0), (0, 1)), tag="shape"):
    return TriangleMesh(points, [[0, 1, 2]], [[0, 1], [1, 2], [2, 0]], [tag] * 3)


@pytest.fixture(scope="session")
def desk_mesh():
    return channel_mesh(20)


@pytest.fixture(scope="session")
def coarse_mesh():
    return channel_mesh(10, hole=((0.3, 0.5), 0.2))


@pytest.fixture(scope="session")
def empty_channel():
    return channel_mesh(20, hole=None)


@pytest.fixture
def params():
    return PhysicsParams()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance results, printed as one line per criterion at the end of the run
ACCEPTANCE = []


def record(number, ok, detail):
    ACCEPTANCE.append((number, bool(ok), detail))
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
