import numpy as np
import pytest

from cempc.harness import BENCHMARK_X0
from cempc.mpc import approx_v_infinity
from cempc.system import benchmark_system

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def bench():
    return benchmark_system()


@pytest.fixture(scope="session")
def x0():
    return np.array(BENCHMARK_X0)


@pytest.fixture(scope="session")
def v_inf(bench, x0):
    return approx_v_infinity(bench.system, bench.weights, bench.inputs, x0, rel_tol=1e-6)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
