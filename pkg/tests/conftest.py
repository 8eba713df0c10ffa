import pytest

from codedqueue import SystemConfig, bos_capacity


@pytest.fixture
def small():
    return SystemConfig(2, 1.0, 1.0)


def at_load(r, fraction, mu=1.0):
    return SystemConfig(r, fraction * bos_capacity(r, mu), mu)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LOG: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LOG:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LOG, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
