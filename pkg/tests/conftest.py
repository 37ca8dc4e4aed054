import numpy as np
import pytest

from minresfem.mesh import bisect, initial_square_mesh, uniform_refine
from minresfem.problems import manufactured_smooth, paper_corner


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def mesh0():
    return initial_square_mesh(("left",))


@pytest.fixture
def mesh_dirichlet():
    return initial_square_mesh(())


@pytest.fixture
def mesh_graded():
    """Locally refined mesh near (0, 0), non-uniform on purpose."""
    m = initial_square_mesh(("left",))
    for _ in range(4):
        c = m.vertices[m.triangles].mean(axis=1)
        m = bisect(m, np.nonzero(np.hypot(c[:, 0], c[:, 1]) < 0.4)[0])
    return uniform_refine(m)


@pytest.fixture
def corner_data():
    return paper_corner()


@pytest.fixture
def smooth_data():
    return manufactured_smooth()


def pytest_terminal_summary(terminalreporter):
    import sys
    for mod in list(sys.modules.values()):
        results = getattr(mod, "ACCEPTANCE_RESULTS", None)
        if isinstance(results, dict) and results:
            terminalreporter.section("acceptance criteria")
            for n in sorted(results):
                terminalreporter.write_line(results[n])
            break
