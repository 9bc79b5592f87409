import sys

import pytest

from lvlm_csp.model import TOY_DIMS, init_weights


@pytest.fixture(scope="session")
def dims():
    return TOY_DIMS


@pytest.fixture(scope="session")
def weights(dims):
    return init_weights(dims, 7)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(module, "_RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
