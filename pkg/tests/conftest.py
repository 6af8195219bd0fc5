import numpy as np
import pytest

from rspi.core_model import ControlProblem, Quadratic, Region, TargetsThreats


@pytest.fixture
def quad_problem():
    return ControlProblem.one_dim(1.0, 1.0, Quadratic(1.0, 0.0), 1.0)


@pytest.fixture
def fig4_cost():
    return TargetsThreats((Region(-0.1, 0.0, -10.0), Region(0.0, 0.1, 10.0)))


def two_targets(eps=0.02, cost=-10.0):
    return TargetsThreats((Region(-1 - eps / 2, -1 + eps / 2, cost), Region(1 - eps / 2, 1 + eps / 2, cost)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
