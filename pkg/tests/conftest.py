import numpy as np
import pytest

from ecgdx import syngen

CRITERIA = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[CRITERIA] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def record_criterion(request):
    """record(number, title, ok, detail) -> ok; one PASS/FAIL line per criterion."""
    lines = request.config.stash[CRITERIA]

    def record(number, title, ok, detail):
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        lines.append((number, line))
        print(line)
        return ok

    return record


@pytest.fixture(scope="session")
def small_cfg():
    return syngen.GenConfig(n=8, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
