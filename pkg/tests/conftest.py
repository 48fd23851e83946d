import pytest

from sir_opticon.dynamics import CostWeights, EpidemicParams, SirState
from sir_opticon.synthesis import optimal_open_loop

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def params():
    return EpidemicParams(beta_star=0.08, beta=0.16, gamma=0.06, i_M=0.02)


@pytest.fixture(scope="session")
def weights():
    return CostWeights(lambda1=0.0, lambda2=1.0)


@pytest.fixture(scope="session")
def scenario1(params, weights):
    return optimal_open_loop(SirState(0.7, 0.001), 500.0, params, weights)


@pytest.fixture(scope="session")
def scenario2(params, weights):
    return optimal_open_loop(SirState(0.85, 0.001), 500.0, params, weights)


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
