from pathlib import Path

import pytest

from vvots.case_io import Bus, Generator, Line, PowerCase, load_case, validate

DATA = Path(__file__).parent / "data"


def synthetic_paths():
    return sorted((DATA / "synthetic").glob("syn*.json"))


def load_net(name):
    path = DATA / name
    return validate(load_case(path))


def two_bus(switchable=False, c1=1.0, load=0.5, r=0.0, x=0.2, vdiff=0.1):
    case = PowerCase(
        100.0,
        [Bus(1, 0.0, 0.0, 0.9, 1.1), Bus(2, load, 0.0, 0.9, 1.1)],
        [Generator(1, 0.0, 2.0, -2.0, 2.0, 0.0, c1)],
        [Line(1, 2, r, x, vdiff_max=vdiff, switchable=switchable)],
        name="two_bus",
    )
    return case


def two_bus_parallel():
    """Two buses joined by a fixed line and a switchable line (lossy)."""
    return PowerCase(
        100.0,
        [Bus(1, 0.0, 0.0, 0.95, 1.05), Bus(2, 0.8, 0.2, 0.95, 1.05), Bus(3, 0.3, 0.1, 0.95, 1.05)],
        [Generator(1, 0.0, 3.0, -2.0, 2.0, 10.0, 20.0)],
        [
            Line(1, 2, 0.02, 0.1),
            Line(2, 3, 0.02, 0.1),
            Line(1, 3, 0.03, 0.12, switchable=True),
        ],
        name="tri",
    )


@pytest.fixture
def ring5():
    return load_net("ring5.json")


@pytest.fixture
def case5():
    return load_net("case5.m")


@pytest.fixture(scope="session")
def case30():
    return validate(load_case("case30"))


# acceptance lines are collected here and echoed after the test session
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
