import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from heisplane.cell_grid import CellSpec, make_grid
from heisplane.heis_core import build_integer_base

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# acceptance results, printed once at the end of the session
ACCEPTANCE: dict = {}


@pytest.fixture
def record_criterion():
    def record(number: int, passed: bool, detail: str):
        ACCEPTANCE[number] = (bool(passed), detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def small_grid():
    """omega = (1, 0), 8 x 64 x 8 nodes, L = 4."""
    return make_grid(CellSpec(build_integer_base((1, 0)), M=2.0, L=4.0), (8, 64, 8))


@pytest.fixture(scope="session")
def diag_grid():
    return make_grid(CellSpec(build_integer_base((1, 1)), M=2.0, L=4.0), (16, 92, 16))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
