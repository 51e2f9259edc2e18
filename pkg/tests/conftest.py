import pytest

from bergflow.geometry import EllipticCurve, P1Symmetric
from bergflow.grid import LineGrid, PeriodicGrid2

AC_LINES: dict[str, str] = {}


def record_ac(tag: str, ok: bool, detail: str) -> None:
    AC_LINES[tag] = f"{tag} {'PASS' if ok else 'FAIL'}  {detail}"
    print(AC_LINES[tag])


def pytest_terminal_summary(terminalreporter):
    if not AC_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for tag in sorted(AC_LINES, key=lambda t: int(t.split("-")[1])):
        terminalreporter.write_line(AC_LINES[tag])


@pytest.fixture
def square():
    return EllipticCurve(1j, 1, PeriodicGrid2(32, 32))


@pytest.fixture
def skew():
    return EllipticCurve(0.3 + 1.2j, 2, PeriodicGrid2(32, 32))


@pytest.fixture
def sphere():
    return P1Symmetric(2, LineGrid())
