import numpy as np
import pytest

from saddlelab.risk import logistic_net_risk, quadratic_saddle

# Frozen reference values for the default logistic benchmark, computed once
# with adaptive quadrature (scipy.integrate.quad) and Nelder-Mead, independently
# of the Gauss-Hermite implementation under test.
LOGISTIC_COUPLING = 0.3028527548010794
LOGISTIC_J_AT_INIT = 0.999848649675272  # J(0.8, -0.8)
LOGISTIC_GRADSQ_AT_INIT = 0.38594015924104413
LOGISTIC_MIN_VALUE = 0.603157562324481
LOGISTIC_MINIMIZER = np.array([0.98699465, 0.98699465])


@pytest.fixture(scope="session")
def logistic():
    return logistic_net_risk()


@pytest.fixture
def saddle2():
    return quadratic_saddle([1.0, -1.0])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.pytest_terminal_summary_lines():
        terminalreporter.write_line(line)
