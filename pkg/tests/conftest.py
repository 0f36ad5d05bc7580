import numpy as np
import pytest

from saddleflow.functional import EnergyModel
from saddleflow.mollifier import BumpKernel, SmoothedNonlinearity, preset
from saddleflow.spectral import Domain, eigenpairs

# filled by test_acceptance, echoed at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def basis8():
    return eigenpairs(Domain.interval(), 8)


@pytest.fixture(scope="session")
def basis24():
    return eigenpairs(Domain.interval(), 24)


@pytest.fixture(scope="session")
def cubic8(basis8):
    return EnergyModel(preset("cubic"), basis8)


@pytest.fixture(scope="session")
def thm12_m16(basis8):
    return EnergyModel(SmoothedNonlinearity(preset("thm12", p=4, q=3), BumpKernel(16)), basis8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
