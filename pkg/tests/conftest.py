import math

import pytest
from hypothesis import settings

from tumorcontain import GrowthLaw, MonroGaffney, Thresholds, TumorState, IntegratorConfig

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")

RHO, K, N_CRIT = 0.007, 2e12, 5e11


def gompertz_time(N_from, N_to, rho=RHO, K=K):
    """Closed-form time for dN/dt = rho ln(K/N) N to go from N_from to N_to."""
    return math.log(math.log(K / N_from) / math.log(K / N_to)) / rho


@pytest.fixture
def mg():
    return MonroGaffney(L_max=2.0, N_crit=N_CRIT, law=GrowthLaw("gompertz", RHO, K))


@pytest.fixture
def th():
    return Thresholds(N0=1e10, N_tol=6e10, N_min=3e10, N_crit=N_CRIT)


@pytest.fixture
def init():
    return TumorState(9e9, 1e9)


@pytest.fixture
def cfg():
    return IntegratorConfig(horizon=3000.0)


ACCEPTANCE: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
