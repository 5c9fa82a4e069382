import pytest

from cropoison.geometry import LayoutKind, PoisonGeometry


@pytest.fixture
def optimal_lr():
    """Left-right optimum for a 100px object and 40px trigger at ratio 2."""
    return PoisonGeometry(200.0, 100.0, 0.0, 0.0, 100.0, 100.0, 130.0, 30.0, 40.0, LayoutKind.LEFT_RIGHT)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
