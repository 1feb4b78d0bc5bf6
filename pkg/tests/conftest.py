import numpy as np
import pytest

from vpcoil.scenario import default_scenario
from vpcoil.solvers import projected_gradient_descent

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def default_sc():
    return default_scenario()


@pytest.fixture(scope="session")
def default_problem(default_sc):
    return default_sc.problem()


@pytest.fixture(scope="session")
def default_solution(default_sc, default_problem):
    """PGD on the packaged inverse scenario, shared by the end-to-end tests."""
    return projected_gradient_descent(default_sc.grid().values, default_problem, default_sc.pgd_options())


@pytest.fixture(scope="session")
def small_sc(default_sc):
    # 64 particles, 8 steps: fast enough for per-function tests
    return default_sc.replace(resolution=2, steps=8, intervals=2, reference_control=(0.2, -0.3, 0.1, 0.4, -0.2, 0.3))


@pytest.fixture(scope="session")
def small_problem(small_sc):
    return small_sc.problem()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
