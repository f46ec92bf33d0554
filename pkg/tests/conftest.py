import numpy as np
import pytest

from elastrtm.medium import ElasticMedium

_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def medium():
    return ElasticMedium(0.5, 0.25, 2 * np.pi)


def rel(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


@pytest.fixture(scope="session")
def acceptance_report(pytestconfig):
    """Record one summary line per acceptance criterion; printed after the run."""
    lines = pytestconfig.stash.setdefault(_ACCEPTANCE, [])

    def record(number, passed, detail):
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        lines.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
