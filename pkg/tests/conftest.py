import warnings

import pytest
from hypothesis import HealthCheck, settings

from cachebandit.catalog import Catalog, uniform_users_profile

settings.register_profile("repo", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture
def toy5():
    """Five files, sizes (1,1,2,2,3), M=4, U=10, rho=0.8."""
    cat = Catalog((1, 1, 2, 2, 3), capacity=4, max_users=10)
    return cat, uniform_users_profile(cat, 0.8)


@pytest.fixture(autouse=True)
def _quiet_gamma_warning():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="gamma=.*below")
        yield


ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def report():
    """Record and print one PASS/FAIL line for an acceptance criterion."""

    def _report(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return passed

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
