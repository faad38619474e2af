import numpy as np
import pytest

from cavity_push.fields import ModeGeometry, PhysicalConstants, default_system

# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def record(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE[n])


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])


@pytest.fixture(scope="session")
def params():
    return default_system()


@pytest.fixture(scope="session")
def geom():
    return ModeGeometry()


@pytest.fixture(scope="session")
def constants():
    return PhysicalConstants()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
