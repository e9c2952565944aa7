import pytest

from mergelane.network import build_reference_network
from mergelane.policy import parse_policy


@pytest.fixture
def ref_net():
    return build_reference_network()


@pytest.fixture
def dbl():
    return parse_policy("DBL")


ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
