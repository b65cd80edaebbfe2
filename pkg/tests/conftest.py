import numpy as np
import pytest

_CRITERIA = {}


class CriterionLog:
    def record(self, number, passed, detail=""):
        _CRITERIA[number] = (bool(passed), detail)


@pytest.fixture
def criterion():
    return CriterionLog()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        passed, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
