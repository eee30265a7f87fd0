import numpy as np
import pytest

from posbias.domain import PositionBiasCurve, generate_world


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_world():
    return generate_world(50, 4, {"family": "exponential_tail", "scale": 0.2}, seed=1)


@pytest.fixture(scope="session")
def large_world():
    return generate_world(500, 10, {"family": "exponential_tail", "scale": 0.2}, seed=1)


@pytest.fixture
def curve_beta1():
    return PositionBiasCurve.power_law(1.0, 6)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("tests.test_acceptance")
    if module and module.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(module.RESULTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
