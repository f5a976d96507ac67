import sys

import pytest

from scmbench.dgp import load_builtin


@pytest.fixture(scope="session")
def violence():
    return load_builtin("violence")


@pytest.fixture(scope="session")
def disease():
    return load_builtin("disease")


@pytest.fixture(scope="session")
def cv():
    return load_builtin("cv")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
