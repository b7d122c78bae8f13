import numpy as np
import pytest

from implicit_shape.costs import Annulus, Circle
from implicit_shape.mesh_fem import build_structured_mesh
from implicit_shape.problem import ShapeProblem

SQUARE = (-1.0, 1.0, -1.0, 1.0)

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = {}


def record_acceptance(number, passed, detail):
    ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])


@pytest.fixture(scope="session")
def mesh80():
    return build_structured_mesh(SQUARE, 80, 80)


@pytest.fixture(scope="session")
def problem80(mesh80):
    return ShapeProblem(mesh80)


@pytest.fixture(scope="session")
def state_1a(problem80):
    G = problem80.space.interpolate(Circle(0.2, 0.2, 0.5))
    return problem80.state(G, np.zeros(problem80.u_space.n))


@pytest.fixture(scope="session")
def state_1b(problem80):
    G = problem80.space.interpolate(Annulus(0.2, 0.2, 0.4, 0.2))
    return problem80.state(G, np.zeros(problem80.u_space.n))


@pytest.fixture(scope="session")
def mesh20():
    return build_structured_mesh(SQUARE, 20, 20)


@pytest.fixture(scope="session")
def problem20(mesh20):
    return ShapeProblem(mesh20)
