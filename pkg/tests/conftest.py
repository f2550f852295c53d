import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import network, network_game, reference_scheduler, REFERENCE_VALUATION  # noqa: E402


@pytest.fixture(scope="session")
def net():
    return network()


@pytest.fixture(scope="session")
def game(net):
    return network_game(net)


@pytest.fixture(scope="session")
def ref_valuation():
    return dict(REFERENCE_VALUATION)


@pytest.fixture(scope="session")
def ref_scheduler(game):
    return reference_scheduler(game)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
