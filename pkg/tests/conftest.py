import pytest

from markovwaa.losses import LossFunction
from markovwaa.spaces import ApproximationStructure, SignalSpace


@pytest.fixture
def interval():
    return ApproximationStructure(SignalSpace.unit_interval(), 10)


@pytest.fixture
def square():
    return LossFunction.square()


@pytest.fixture
def absolute():
    return LossFunction.absolute()


@pytest.fixture
def zero_one():
    return LossFunction.zero_one()


class AcceptanceLog:
    def __init__(self):
        self.lines = {}

    def record(self, criterion, passed, detail):
        self.lines[criterion] = f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}"
        print(self.lines[criterion])
        return passed


ACCEPTANCE = AcceptanceLog()


@pytest.fixture(scope="session")
def acceptance():
    return ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE.lines:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE.lines):
            terminalreporter.write_line(ACCEPTANCE.lines[key])
