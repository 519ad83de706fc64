import numpy as np
import pytest

from ccdo.g24 import CalibrationCache

# filled by the acceptance tests, printed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def report_line(number: int, title: str, ok: bool, detail: str = "") -> None:
    line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}" + (f" -- {detail}" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def calibration_path(tmp_path_factory):
    return tmp_path_factory.mktemp("calibration") / "cache.txt"


@pytest.fixture(scope="session")
def cache(calibration_path):
    return CalibrationCache(calibration_path)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
