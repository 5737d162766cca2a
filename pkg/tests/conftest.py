import pytest

from helpers import make_scene


@pytest.fixture
def scene3():
    return make_scene(3, seed=3)


@pytest.fixture
def scene4():
    return make_scene(4, seed=4)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
