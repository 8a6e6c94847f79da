import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from impulse_game.model import bundled_spec  # noqa: E402
from impulse_game.symmetric import closed_form_equilibrium  # noqa: E402

@pytest.fixture(scope="session")
def problem1():
    return bundled_spec("problem1")


@pytest.fixture(scope="session")
def problem2():
    return bundled_spec("problem2")


@pytest.fixture(scope="session")
def cubic():
    return bundled_spec("cubic")


@pytest.fixture(scope="session")
def linear_cubic():
    return bundled_spec("linear_cubic")


@pytest.fixture(scope="session")
def p1_eq(problem1):
    return closed_form_equilibrium(problem1)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS.lines():
            terminalreporter.write_line(line)
